#pragma once

#include <cmath>
#include <numbers>

#include "jmvl/common.hpp"
#include "jmvl/tensor.hpp"

namespace jmvl {

inline constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)
inline constexpr double kProbFloor = 1e-7;                // mean clamp for log densities
inline constexpr double kVarFloor = 1e-6;                 // additive variance floor

/// Diagonal Gaussian over a [B, d] batch. `var` comes out of a softplus head
/// plus the variance floor, so it is strictly positive by construction.
template <typename T>
struct DiagGaussianParams {
    Tensor<T> mean;
    Tensor<T> var;
};

template <typename T>
struct BernoulliParams {
    Tensor<T> mean;  // in (0,1), sigmoid of the head
};

template <typename T>
struct CategoricalParams {
    Tensor<T> mean;  // rows on the simplex, softmax of the head
};

template <typename T>
struct FixedVarGaussianParams {
    Tensor<T> mean;  // variance pinned to 1, not learned
};

struct StdNormalPrior {
    std::size_t dim;
};

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

template <typename T>
void check_batched(const Tensor<T>& t, const char* what) {
    if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected [batch, dim], got " + shape_str(t.shape()));
}

}  // namespace detail

/// z = mu + sqrt(var) * eps. Gradient flows into mu/var only; eps is data.
template <typename T>
Tensor<T> rsample(const DiagGaussianParams<T>& q, const Tensor<T>& eps) {
    detail::check_same_shape(q.mean, eps, "rsample");
    Tape<T>& t = *q.mean.tape();
    return t.add(q.mean, t.mul(t.sqrt(q.var), eps));
}

/// log N(value; mu, diag(var)) summed over the event dim -> [B].
template <typename T>
Tensor<T> log_prob(const DiagGaussianParams<T>& d, const Tensor<T>& value) {
    detail::check_batched(d.mean, "gaussian log_prob");
    detail::check_same_shape(d.mean, value, "gaussian log_prob");
    Tape<T>& t = *d.mean.tape();
    Tensor<T> diff = t.add(value, t.scale(d.mean, T(-1)));
    Tensor<T> quad = t.div(t.square(diff), d.var);
    Tensor<T> per_dim = t.add(t.add_scalar(t.log(d.var), T(kLog2Pi)), quad);
    return t.scale(t.sum_rows(per_dim), T(-0.5));
}

template <typename T>
Tensor<T> log_prob(const FixedVarGaussianParams<T>& d, const Tensor<T>& value) {
    detail::check_batched(d.mean, "fixed-var gaussian log_prob");
    detail::check_same_shape(d.mean, value, "fixed-var gaussian log_prob");
    Tape<T>& t = *d.mean.tape();
    Tensor<T> diff = t.add(value, t.scale(d.mean, T(-1)));
    Tensor<T> per_dim = t.add_scalar(t.square(diff), T(kLog2Pi));
    return t.scale(t.sum_rows(per_dim), T(-0.5));
}

/// Bernoulli log-mass; values must be exactly 0 or 1.
template <typename T>
Tensor<T> log_prob(const BernoulliParams<T>& d, const Tensor<T>& value) {
    detail::check_batched(d.mean, "bernoulli log_prob");
    detail::check_same_shape(d.mean, value, "bernoulli log_prob");
    for (const T& v : value.values())
        if (v != T(0) && v != T(1)) throw SupportError("bernoulli log_prob: value not in {0,1}");
    Tape<T>& t = *d.mean.tape();
    Tensor<T> mu = t.clamp(d.mean, T(kProbFloor), T(1.0 - kProbFloor));
    Tensor<T> one_minus_v = t.add_scalar(t.scale(value, T(-1)), T(1));
    Tensor<T> one_minus_mu = t.add_scalar(t.scale(mu, T(-1)), T(1));
    Tensor<T> per_dim = t.add(t.mul(value, t.log(mu)), t.mul(one_minus_v, t.log(one_minus_mu)));
    return t.sum_rows(per_dim);
}

/// Categorical log-mass; values must be one-hot rows.
template <typename T>
Tensor<T> log_prob(const CategoricalParams<T>& d, const Tensor<T>& value) {
    detail::check_batched(d.mean, "categorical log_prob");
    detail::check_same_shape(d.mean, value, "categorical log_prob");
    const Shape& s = value.shape();
    const std::vector<T>& v = value.values();
    for (std::size_t r = 0; r < s[0]; ++r) {
        T sum = 0;
        for (std::size_t j = 0; j < s[1]; ++j) {
            T e = v[r * s[1] + j];
            if (e != T(0) && e != T(1)) throw SupportError("categorical log_prob: row is not one-hot");
            sum += e;
        }
        if (sum != T(1)) throw SupportError("categorical log_prob: row is not one-hot");
    }
    Tape<T>& t = *d.mean.tape();
    Tensor<T> mu = t.clamp(d.mean, T(kProbFloor), T(1.0 - kProbFloor));
    return t.sum_rows(t.mul(value, t.log(mu)));
}

/// KL(N(mu, var) || N(0, I)) per example -> [B].
template <typename T>
Tensor<T> kl_to_std_normal(const DiagGaussianParams<T>& q) {
    detail::check_batched(q.mean, "kl_to_std_normal");
    Tape<T>& t = *q.mean.tape();
    Tensor<T> per_dim =
        t.add(t.add(t.square(q.mean), q.var), t.add_scalar(t.scale(t.log(q.var), T(-1)), T(-1)));
    return t.scale(t.sum_rows(per_dim), T(0.5));
}

/// KL(q || p) between diagonal Gaussians, per example -> [B].
template <typename T>
Tensor<T> kl_diag_gaussians(const DiagGaussianParams<T>& q, const DiagGaussianParams<T>& p) {
    detail::check_batched(q.mean, "kl_diag_gaussians");
    detail::check_same_shape(q.mean, p.mean, "kl_diag_gaussians");
    Tape<T>& t = *q.mean.tape();
    Tensor<T> log_ratio = t.add(t.log(p.var), t.scale(t.log(q.var), T(-1)));
    Tensor<T> mean_diff = t.add(q.mean, t.scale(p.mean, T(-1)));
    Tensor<T> num = t.add(q.var, t.square(mean_diff));
    Tensor<T> per_dim = t.add_scalar(t.add(log_ratio, t.div(num, p.var)), T(-1));
    return t.scale(t.sum_rows(per_dim), T(0.5));
}

}  // namespace jmvl
