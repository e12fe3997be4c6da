#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "jmvl/tensor.hpp"

namespace jmvl {

/// Central finite differences against precomputed analytic gradients.
/// `f` rebuilds the scalar loss from the parameters' current values on a
/// fresh tape; any stochastic inputs must be frozen by the caller.
template <typename T, typename F>
double finite_diff_error(F&& f, const std::vector<Parameter<T>*>& params, const GradMap<T>& analytic,
                         T eps) {
    double max_rel = 0.0;
    for (Parameter<T>* p : params) {
        const std::vector<T>& g = analytic.grad(*p);
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const T saved = p->value[i];
            p->value[i] = saved + eps;
            double up;
            {
                Tape<T> t;
                up = static_cast<double>(f(t).scalar_value());
            }
            p->value[i] = saved - eps;
            double down;
            {
                Tape<T> t;
                down = static_cast<double>(f(t).scalar_value());
            }
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
            const double a = static_cast<double>(g[i]);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

/// Runs backward on f's loss and compares against central finite differences.
/// Returns the max relative error over all parameter entries.
template <typename T, typename F>
double finite_diff_check(F&& f, const std::vector<Parameter<T>*>& params, T eps) {
    GradMap<T> analytic;
    {
        Tape<T> t;
        Tensor<T> loss = f(t);
        analytic = t.backward(loss);
    }
    return finite_diff_error(f, params, analytic, eps);
}

}  // namespace jmvl
