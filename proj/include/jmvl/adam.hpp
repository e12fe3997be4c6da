#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "jmvl/common.hpp"
#include "jmvl/tensor.hpp"

namespace jmvl {

/// Adam with bias correction; the paper pins only the learning rate, the
/// remaining constants are the algorithm's standard defaults.
template <typename T>
struct AdamState {
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps_hat = T(1e-8);
    std::int64_t step = 0;

    struct Moments {
        std::vector<T> m, v;
    };
    std::map<std::string, Moments> moments;
};

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const GradMap<T>& grads, AdamState<T>& state,
               T lr) {
    state.step += 1;
    const T b1 = state.beta1, b2 = state.beta2;
    const T corr1 = T(1) - static_cast<T>(std::pow(static_cast<double>(b1), state.step));
    const T corr2 = T(1) - static_cast<T>(std::pow(static_cast<double>(b2), state.step));
    for (Parameter<T>* p : params) {
        const std::vector<T>& g = grads.grad(*p);
        for (const T& gv : g)
            if (!std::isfinite(gv)) throw NumericsError("non-finite gradient for parameter " + p->name);
        auto& mom = state.moments[p->name];
        if (mom.m.empty()) {
            mom.m.assign(p->numel(), T(0));
            mom.v.assign(p->numel(), T(0));
        } else if (mom.m.size() != p->numel()) {
            throw ShapeError("adam moments for " + p->name + " do not match the parameter");
        }
        for (std::size_t i = 0; i < p->numel(); ++i) {
            mom.m[i] = b1 * mom.m[i] + (T(1) - b1) * g[i];
            mom.v[i] = b2 * mom.v[i] + (T(1) - b2) * g[i] * g[i];
            const T m_hat = mom.m[i] / corr1;
            const T v_hat = mom.v[i] / corr2;
            p->value[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps_hat);
        }
    }
}

}  // namespace jmvl
