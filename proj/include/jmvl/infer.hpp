#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "jmvl/common.hpp"
#include "jmvl/data.hpp"
#include "jmvl/models.hpp"
#include "jmvl/rng.hpp"
#include "jmvl/tensor.hpp"

namespace jmvl {

enum class MissingModality { x, w };
enum class ComplementInit { zeros, prior };
enum class Direction { x_given_w, w_given_x };

inline const char* direction_name(Direction d) {
    return d == Direction::x_given_w ? "x_given_w" : "w_given_x";
}

/// Markov-chain record for one item: entry 0 is the initialization, entries
/// 1..T are the sampled estimates with the latent that produced them. The
/// final decoder mean rides along for display.
template <typename T>
struct ComplementTrajectory {
    MissingModality missing = MissingModality::x;
    std::size_t iterations = 0;
    std::vector<std::vector<T>> estimates;  // T+1 rows
    std::vector<std::vector<T>> latents;    // T rows
    std::vector<T> final_decoder_mean;
};

/// Sample-approximated conditional log-likelihood, per-example mean in nats.
struct CllEstimate {
    double value = 0.0;
    std::size_t n = 0;  // latent samples per item
    double std_error = 0.0;
    std::size_t items = 0;
    bool hierarchical_underestimates = false;  // set for the nested jmvae_h estimator
};

namespace detail {

// Evaluation-side log densities; same clamping conventions as the tape path.
inline double log_density_row(ModalityKind kind, const float* mean, const float* target,
                              std::size_t dim) {
    double acc = 0.0;
    switch (kind) {
        case ModalityKind::bernoulli:
            for (std::size_t j = 0; j < dim; ++j) {
                double mu = std::min(std::max(static_cast<double>(mean[j]), kProbFloor),
                                     1.0 - kProbFloor);
                acc += target[j] == 1.0f ? std::log(mu) : std::log(1.0 - mu);
            }
            return acc;
        case ModalityKind::categorical:
            for (std::size_t j = 0; j < dim; ++j) {
                if (target[j] != 1.0f) continue;
                double mu = std::min(std::max(static_cast<double>(mean[j]), kProbFloor),
                                     1.0 - kProbFloor);
                acc += std::log(mu);
            }
            return acc;
        case ModalityKind::fixed_var_gaussian:
            for (std::size_t j = 0; j < dim; ++j) {
                double d = static_cast<double>(target[j]) - static_cast<double>(mean[j]);
                acc += -0.5 * (kLog2Pi + d * d);
            }
            return acc;
    }
    return acc;
}

// One modality sample from decoder means, drawn from the item's own stream.
template <typename T>
void sample_modality_row(ModalityKind kind, const T* mean, std::size_t dim, Rng& rng, T* out) {
    switch (kind) {
        case ModalityKind::bernoulli:
            for (std::size_t j = 0; j < dim; ++j)
                out[j] = rng.uniform() < static_cast<double>(mean[j]) ? T(1) : T(0);
            return;
        case ModalityKind::categorical: {
            double u = rng.uniform();
            double acc = 0.0;
            std::size_t pick = dim - 1;
            for (std::size_t j = 0; j < dim; ++j) {
                acc += static_cast<double>(mean[j]);
                if (u < acc) {
                    pick = j;
                    break;
                }
            }
            for (std::size_t j = 0; j < dim; ++j) out[j] = j == pick ? T(1) : T(0);
            return;
        }
        case ModalityKind::fixed_var_gaussian:
            for (std::size_t j = 0; j < dim; ++j)
                out[j] = mean[j] + static_cast<T>(rng.normal());
            return;
    }
}

template <typename T>
struct FinalState {
    std::vector<T> missing;            // [n, d_miss] final sampled estimate
    std::vector<T> mu, var;            // [n, z] latent posterior at the final state
    std::vector<T> mu2, var2;          // [n, z2] top layer (jmvae_h)
    std::vector<T> last_decoder_mean;  // [n, d_miss]
};

// Runs n chains in lockstep. Row-wise forwards and per-item streams make the
// batched run bitwise identical to running each item alone.
template <typename T>
FinalState<T> run_chain_block(Model<T>& m, const std::vector<T>& observed, std::size_t n,
                              MissingModality missing, std::size_t iterations, ComplementInit init,
                              std::vector<Rng>& rngs, ComplementTrajectory<T>* traj = nullptr) {
    if (m.kind == ModelKind::jmvae_kl)
        throw UnsupportedOperation(
            "jmvae_kl complements a modality with its unimodal encoders; it needs no chain");
    if (m.kind != ModelKind::jmvae && m.kind != ModelKind::jmvae_h)
        throw UnsupportedOperation(std::string("iterative sampling is undefined for model kind ") +
                                   model_kind_name(m.kind));
    if (iterations < 1) throw ConfigError("iterative sampling needs at least one step");
    const bool hier = m.kind == ModelKind::jmvae_h;
    const ModalitySpec miss_spec = missing == MissingModality::x ? m.mx : m.mw;
    const ModalitySpec obs_spec = missing == MissingModality::x ? m.mw : m.mx;
    if (observed.size() != n * obs_spec.dim)
        throw ShapeError("observed block does not match the conditioning modality");
    const Network<T>& encoder = m.net(hier ? "q_z1" : "q_joint");
    const Network<T>& decoder = m.net(missing == MissingModality::x ? "dec_x" : "dec_w");

    FinalState<T> out;
    out.missing.assign(n * miss_spec.dim, T(0));

    if (init == ComplementInit::prior) {
        // generative prior sample per item: z (top down for jmvae_h), then decode
        std::vector<T> code(n * m.z_dim);
        if (hier) {
            std::vector<T> z2(n * m.z2_dim);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m.z2_dim; ++j)
                    z2[i * m.z2_dim + j] = static_cast<T>(rngs[i].normal());
            Tape<T> t;
            auto prior = m.net("p_z1_z2").forward(t, t.constant({n, m.z2_dim}, z2));
            const auto& pm = prior.mean.values();
            const auto& pv = prior.var.values();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m.z_dim; ++j) {
                    std::size_t k = i * m.z_dim + j;
                    code[k] = pm[k] + std::sqrt(pv[k]) * static_cast<T>(rngs[i].normal());
                }
        } else {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m.z_dim; ++j)
                    code[i * m.z_dim + j] = static_cast<T>(rngs[i].normal());
        }
        Tape<T> t;
        auto dec = decoder.forward(t, t.constant({n, m.z_dim}, code));
        const auto& mean = dec.mean.values();
        for (std::size_t i = 0; i < n; ++i)
            sample_modality_row(miss_spec.kind, mean.data() + i * miss_spec.dim, miss_spec.dim,
                               rngs[i], out.missing.data() + i * miss_spec.dim);
    }
    if (traj) {
        traj->missing = missing;
        traj->iterations = iterations;
        traj->estimates.push_back(out.missing);
    }

    for (std::size_t step = 1; step <= iterations; ++step) {
        Tape<T> t;
        Tensor<T> x_in = t.constant({n, m.mx.dim},
                                    missing == MissingModality::x
                                        ? out.missing
                                        : observed);
        Tensor<T> w_in = t.constant({n, m.mw.dim},
                                    missing == MissingModality::w ? out.missing : observed);
        auto enc = encoder.forward(t, x_in, &w_in);
        const auto& qm = enc.mean.values();
        const auto& qv = enc.var.values();
        std::vector<T> z(n * m.z_dim);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m.z_dim; ++j) {
                std::size_t k = i * m.z_dim + j;
                z[k] = qm[k] + std::sqrt(qv[k]) * static_cast<T>(rngs[i].normal());
            }
        auto dec = decoder.forward(t, t.constant({n, m.z_dim}, z));
        const auto& mean = dec.mean.values();
        for (std::size_t i = 0; i < n; ++i)
            sample_modality_row(miss_spec.kind, mean.data() + i * miss_spec.dim, miss_spec.dim,
                               rngs[i], out.missing.data() + i * miss_spec.dim);
        if (step == iterations)
            out.last_decoder_mean.assign(mean.begin(), mean.end());
        if (traj) {
            traj->estimates.push_back(out.missing);
            traj->latents.push_back(z);
        }
    }

    // final-state encode: the posterior the estimators sample from
    {
        Tape<T> t;
        Tensor<T> x_in = t.constant({n, m.mx.dim},
                                    missing == MissingModality::x ? out.missing : observed);
        Tensor<T> w_in = t.constant({n, m.mw.dim},
                                    missing == MissingModality::w ? out.missing : observed);
        auto enc = encoder.forward(t, x_in, &w_in);
        out.mu = enc.mean.values();
        out.var = enc.var.values();
        if (hier) {
            auto top = m.net("q_z2").forward(t, enc.trunk);
            out.mu2 = top.mean.values();
            out.var2 = top.var.values();
        }
    }
    if (traj) traj->final_decoder_mean = out.last_decoder_mean;
    return out;
}

// Unimodal-encoder posterior (jmvae_kl shortcut and latent extraction).
template <typename T>
void encode_block(const Network<T>& net, const std::vector<T>& rows, std::size_t n, std::size_t dim,
                  std::vector<T>& mu, std::vector<T>& var) {
    Tape<T> t;
    auto out = net.forward(t, t.constant({n, dim}, rows));
    mu = out.mean.values();
    var = out.var.values();
}

}  // namespace detail

/// Iterative-sampling complement of one item's missing modality (jmvae and
/// jmvae_h). Deterministic in (model, inputs, seed).
template <typename T>
ComplementTrajectory<T> complement(Model<T>& m, const std::vector<T>& observed,
                                   MissingModality missing, std::size_t iterations,
                                   ComplementInit init, std::uint64_t seed) {
    ComplementTrajectory<T> traj;
    std::vector<Rng> rngs;
    rngs.emplace_back(seed);
    detail::run_chain_block(m, observed, 1, missing, iterations, init, rngs, &traj);
    return traj;
}

struct CllOptions {
    std::size_t n_samples = 10;   // N in the sample approximation
    std::size_t chain_iterations = 10;
    ComplementInit init = ComplementInit::zeros;
    std::size_t max_items = 0;    // 0 = all

    std::size_t block = 128;  // evaluation batch width
};

namespace detail {

struct Accum {
    double sum = 0.0;
    double se_sq = 0.0;  // sum of per-item var/N
    std::size_t items = 0;

    void add_item(const std::vector<double>& samples) {
        double s = 0, s2 = 0;
        for (double v : samples) s += v;
        double mean = s / static_cast<double>(samples.size());
        for (double v : samples) s2 += (v - mean) * (v - mean);
        double var = samples.size() > 1 ? s2 / static_cast<double>(samples.size() - 1) : 0.0;
        sum += mean;
        se_sq += var / static_cast<double>(samples.size());
        items += 1;
    }
    CllEstimate finish(std::size_t n_samples) const {
        CllEstimate e;
        e.items = items;
        e.n = n_samples;
        e.value = sum / static_cast<double>(items);
        e.std_error = std::sqrt(se_sq) / static_cast<double>(items);
        return e;
    }
};

// target/conditioning rows for a block of test items; image targets are
// binarized from a per-item eval stream so both directions stay consistent.
template <typename T>
struct EvalBlock {
    std::size_t n = 0;
    std::vector<T> target, cond;
};

template <typename T>
EvalBlock<T> make_eval_block(const Model<T>& m, const BimodalDataset& test, Direction dir,
                             std::size_t begin, std::size_t n, std::uint64_t seed) {
    EvalBlock<T> blk;
    blk.n = n;
    std::vector<T> x_rows(n * test.x_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t item = begin + i;
        const float* src = test.x.data() + item * test.x_dim;
        T* dst = x_rows.data() + i * test.x_dim;
        if (test.x_is_image && m.mx.kind == ModalityKind::bernoulli) {
            Rng rng(derive_seed(seed, {kTagEvalBin, item}));
            for (std::size_t j = 0; j < test.x_dim; ++j)
                dst[j] = rng.uniform() < static_cast<double>(src[j]) ? T(1) : T(0);
        } else {
            for (std::size_t j = 0; j < test.x_dim; ++j) dst[j] = static_cast<T>(src[j]);
        }
    }
    std::vector<T> w_rows(n * test.w_dim);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < test.w_dim; ++j)
            w_rows[i * test.w_dim + j] = static_cast<T>(test.w[(begin + i) * test.w_dim + j]);
    if (dir == Direction::x_given_w) {
        blk.target = std::move(x_rows);
        blk.cond = std::move(w_rows);
    } else {
        blk.target = std::move(w_rows);
        blk.cond = std::move(x_rows);
    }
    return blk;
}

}  // namespace detail

/// Nested estimator for jmvae_h: z2 from the chain's final-state top-layer
/// posterior, z1 from the learned prior, N draws at both levels. Flagged as
/// potentially underestimating relative to the single-level estimator.
template <typename T>
CllEstimate cond_loglik_hier(Model<T>& m, const BimodalDataset& test, Direction dir,
                             std::uint64_t seed, const CllOptions& opt = {}) {
    if (m.kind != ModelKind::jmvae_h)
        throw UnsupportedOperation("cond_loglik_hier needs a jmvae_h model");
    if (opt.n_samples < 1) throw ConfigError("cond_loglik: N must be >= 1");
    const ModalitySpec target_spec = dir == Direction::x_given_w ? m.mx : m.mw;
    const Network<T>& dec = m.net(dir == Direction::x_given_w ? "dec_x" : "dec_w");
    const MissingModality missing =
        dir == Direction::x_given_w ? MissingModality::x : MissingModality::w;
    const std::size_t n_items =
        opt.max_items > 0 ? std::min(opt.max_items, test.n) : test.n;
    const std::size_t N = opt.n_samples;

    detail::Accum acc;
    for (std::size_t begin = 0; begin < n_items; begin += opt.block) {
        const std::size_t bn = std::min(opt.block, n_items - begin);
        auto blk = detail::make_eval_block(m, test, dir, begin, bn, seed);
        std::vector<Rng> rngs;
        rngs.reserve(bn);
        for (std::size_t i = 0; i < bn; ++i)
            rngs.emplace_back(derive_seed(seed, {kTagEval, begin + i}));
        auto fin = detail::run_chain_block(m, blk.cond, bn, missing, opt.chain_iterations, opt.init,
                                           rngs);
        std::vector<std::vector<double>> outer(bn);  // per item: N outer estimates
        for (std::size_t l = 0; l < N; ++l) {
            // z2 draw per item, then its z1 prior and N inner draws
            std::vector<T> z2(bn * m.z2_dim);
            for (std::size_t i = 0; i < bn; ++i)
                for (std::size_t j = 0; j < m.z2_dim; ++j) {
                    std::size_t k = i * m.z2_dim + j;
                    z2[k] = fin.mu2[k] + std::sqrt(fin.var2[k]) * static_cast<T>(rngs[i].normal());
                }
            Tape<T> t;
            auto prior = m.net("p_z1_z2").forward(t, t.constant({bn, m.z2_dim}, z2));
            const auto& pm = prior.mean.values();
            const auto& pv = prior.var.values();
            std::vector<T> z1(bn * N * m.z_dim);
            for (std::size_t i = 0; i < bn; ++i)
                for (std::size_t k = 0; k < N; ++k)
                    for (std::size_t j = 0; j < m.z_dim; ++j) {
                        std::size_t src = i * m.z_dim + j;
                        z1[(i * N + k) * m.z_dim + j] =
                            pm[src] + std::sqrt(pv[src]) * static_cast<T>(rngs[i].normal());
                    }
            auto dmean = dec.forward(t, t.constant({bn * N, m.z_dim}, z1)).mean.values();
            for (std::size_t i = 0; i < bn; ++i) {
                double inner = 0.0;
                std::vector<float> mean_row(target_spec.dim);
                std::vector<float> target_row(target_spec.dim);
                for (std::size_t j = 0; j < target_spec.dim; ++j)
                    target_row[j] = static_cast<float>(blk.target[i * target_spec.dim + j]);
                for (std::size_t k = 0; k < N; ++k) {
                    for (std::size_t j = 0; j < target_spec.dim; ++j)
                        mean_row[j] =
                            static_cast<float>(dmean[(i * N + k) * target_spec.dim + j]);
                    inner += detail::log_density_row(target_spec.kind, mean_row.data(),
                                                     target_row.data(), target_spec.dim);
                }
                outer[i].push_back(inner / static_cast<double>(N));
            }
        }
        for (std::size_t i = 0; i < bn; ++i) acc.add_item(outer[i]);
    }
    CllEstimate e = acc.finish(N);
    e.hierarchical_underestimates = true;
    return e;
}

/// Sample approximation of the conditional log-likelihood: N latent draws per
/// item, averaged log density of the target under the decoder. The latent
/// source depends on the model: unimodal encoders for jmvae_kl, the
/// final-state encoder of a length-T complement chain for jmvae, the learned
/// prior for cvae, and the nested estimator for jmvae_h.
template <typename T>
CllEstimate cond_loglik(Model<T>& m, const BimodalDataset& test, Direction dir, std::uint64_t seed,
                        const CllOptions& opt = {}) {
    if (opt.n_samples < 1) throw ConfigError("cond_loglik: N must be >= 1");
    if (m.kind == ModelKind::vae)
        throw UnsupportedOperation("a vae has no conditioning modality to evaluate");
    if (m.kind == ModelKind::jmvae_h) return cond_loglik_hier(m, test, dir, seed, opt);
    if (m.kind == ModelKind::cvae && (m.cvae_x_given_w != (dir == Direction::x_given_w)))
        throw UnsupportedOperation("cvae was trained for the opposite direction");

    const ModalitySpec target_spec = dir == Direction::x_given_w ? m.mx : m.mw;
    const ModalitySpec cond_spec = dir == Direction::x_given_w ? m.mw : m.mx;
    const Network<T>* dec = nullptr;
    if (m.kind == ModelKind::cvae) dec = &m.net("dec");
    else dec = &m.net(dir == Direction::x_given_w ? "dec_x" : "dec_w");
    const std::size_t n_items =
        opt.max_items > 0 ? std::min(opt.max_items, test.n) : test.n;
    const std::size_t N = opt.n_samples;

    detail::Accum acc;
    for (std::size_t begin = 0; begin < n_items; begin += opt.block) {
        const std::size_t bn = std::min(opt.block, n_items - begin);
        auto blk = detail::make_eval_block(m, test, dir, begin, bn, seed);
        std::vector<Rng> rngs;
        rngs.reserve(bn);
        for (std::size_t i = 0; i < bn; ++i)
            rngs.emplace_back(derive_seed(seed, {kTagEval, begin + i}));

        // latent posterior per item
        std::vector<T> mu, var;
        bool prior_latents = false;
        if (m.kind == ModelKind::jmvae_kl) {
            detail::encode_block(m.net(dir == Direction::x_given_w ? "q_w" : "q_x"), blk.cond, bn,
                                 cond_spec.dim, mu, var);
        } else if (m.kind == ModelKind::jmvae) {
            const MissingModality missing =
                dir == Direction::x_given_w ? MissingModality::x : MissingModality::w;
            auto fin = detail::run_chain_block(m, blk.cond, bn, missing, opt.chain_iterations,
                                               opt.init, rngs);
            mu = std::move(fin.mu);
            var = std::move(fin.var);
        } else {  // cvae: z from the standard-normal prior
            prior_latents = true;
        }

        // N z-draws per item, decode, log density
        std::vector<T> codes;
        const std::size_t code_dim = m.kind == ModelKind::cvae ? m.z_dim + cond_spec.dim : m.z_dim;
        codes.resize(bn * N * code_dim);
        for (std::size_t i = 0; i < bn; ++i)
            for (std::size_t l = 0; l < N; ++l) {
                T* row = codes.data() + (i * N + l) * code_dim;
                for (std::size_t j = 0; j < m.z_dim; ++j) {
                    double eps = rngs[i].normal();
                    row[j] = prior_latents
                                 ? static_cast<T>(eps)
                                 : mu[i * m.z_dim + j] +
                                       std::sqrt(var[i * m.z_dim + j]) * static_cast<T>(eps);
                }
                if (m.kind == ModelKind::cvae)
                    for (std::size_t j = 0; j < cond_spec.dim; ++j)
                        row[m.z_dim + j] = blk.cond[i * cond_spec.dim + j];
            }
        Tape<T> t;
        auto dmean = dec->forward(t, t.constant({bn * N, code_dim}, codes)).mean.values();
        std::vector<float> mean_row(target_spec.dim), target_row(target_spec.dim);
        for (std::size_t i = 0; i < bn; ++i) {
            std::vector<double> samples(N);
            for (std::size_t j = 0; j < target_spec.dim; ++j)
                target_row[j] = static_cast<float>(blk.target[i * target_spec.dim + j]);
            for (std::size_t l = 0; l < N; ++l) {
                for (std::size_t j = 0; j < target_spec.dim; ++j)
                    mean_row[j] = static_cast<float>(dmean[(i * N + l) * target_spec.dim + j]);
                samples[l] = detail::log_density_row(target_spec.kind, mean_row.data(),
                                                     target_row.data(), target_spec.dim);
            }
            acc.add_item(samples);
        }
    }
    return acc.finish(N);
}

/// Posterior statistics of the relevant encoder; jmvae_h reports the top
/// stochastic layer. Missing modalities on chain-based models run T
/// complement iterations first.
template <typename T>
struct LatentStats {
    std::size_t n = 0, dim = 0;
    std::vector<T> mu, var;
    bool had_x = false, had_w = false;
};

template <typename T>
LatentStats<T> extract_latent(Model<T>& m, std::type_identity_t<const std::vector<T>*> x_rows,
                              std::type_identity_t<const std::vector<T>*> w_rows, std::size_t n,
                              std::uint64_t seed, std::size_t chain_iterations = 10,
                              ComplementInit init = ComplementInit::zeros) {
    if (x_rows == nullptr && w_rows == nullptr)
        throw InputError("extract_latent: at least one modality must be present");
    LatentStats<T> out;
    out.n = n;
    out.had_x = x_rows != nullptr;
    out.had_w = w_rows != nullptr;

    auto chain_stats = [&](MissingModality missing, const std::vector<T>& observed) {
        std::vector<Rng> rngs;
        rngs.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            rngs.emplace_back(derive_seed(seed, {kTagEval, i}));
        auto fin = detail::run_chain_block(m, observed, n, missing, chain_iterations, init, rngs);
        if (m.kind == ModelKind::jmvae_h) {
            out.mu = std::move(fin.mu2);
            out.var = std::move(fin.var2);
            out.dim = m.z2_dim;
        } else {
            out.mu = std::move(fin.mu);
            out.var = std::move(fin.var);
            out.dim = m.z_dim;
        }
    };

    switch (m.kind) {
        case ModelKind::vae: {
            if (!x_rows) throw InputError("extract_latent: vae needs x");
            detail::encode_block(m.net("enc"), *x_rows, n, m.mx.dim, out.mu, out.var);
            out.dim = m.z_dim;
            break;
        }
        case ModelKind::cvae: {
            if (!x_rows || !w_rows) throw InputError("extract_latent: cvae needs both modalities");
            Tape<T> t;
            const std::vector<T>& tv = m.cvae_x_given_w ? *x_rows : *w_rows;
            const std::vector<T>& cv = m.cvae_x_given_w ? *w_rows : *x_rows;
            auto target = t.constant({n, m.cvae_x_given_w ? m.mx.dim : m.mw.dim}, tv);
            auto cond = t.constant({n, m.cvae_x_given_w ? m.mw.dim : m.mx.dim}, cv);
            auto enc = m.net("enc").forward(t, target, &cond);
            out.mu = enc.mean.values();
            out.var = enc.var.values();
            out.dim = m.z_dim;
            break;
        }
        case ModelKind::jmvae_kl: {
            if (x_rows && w_rows) {
                Tape<T> t;
                auto xv = t.constant({n, m.mx.dim}, *x_rows);
                auto wv = t.constant({n, m.mw.dim}, *w_rows);
                auto enc = m.net("q_joint").forward(t, xv, &wv);
                out.mu = enc.mean.values();
                out.var = enc.var.values();
            } else if (x_rows) {
                detail::encode_block(m.net("q_x"), *x_rows, n, m.mx.dim, out.mu, out.var);
            } else {
                detail::encode_block(m.net("q_w"), *w_rows, n, m.mw.dim, out.mu, out.var);
            }
            out.dim = m.z_dim;
            break;
        }
        case ModelKind::jmvae:
        case ModelKind::jmvae_h: {
            if (x_rows && w_rows) {
                Tape<T> t;
                auto xv = t.constant({n, m.mx.dim}, *x_rows);
                auto wv = t.constant({n, m.mw.dim}, *w_rows);
                auto enc = m.net(m.kind == ModelKind::jmvae_h ? "q_z1" : "q_joint").forward(t, xv, &wv);
                if (m.kind == ModelKind::jmvae_h) {
                    auto top = m.net("q_z2").forward(t, enc.trunk);
                    out.mu = top.mean.values();
                    out.var = top.var.values();
                    out.dim = m.z2_dim;
                } else {
                    out.mu = enc.mean.values();
                    out.var = enc.var.values();
                    out.dim = m.z_dim;
                }
            } else if (w_rows) {
                chain_stats(MissingModality::x, *w_rows);
            } else {
                chain_stats(MissingModality::w, *x_rows);
            }
            break;
        }
    }
    return out;
}

/// Ratio of between-class scatter to total scatter of per-item latent means,
/// in [0,1]; higher = classes stay separated, lower = collapse.
inline double collapse_score(const std::vector<std::vector<std::vector<double>>>& groups) {
    if (groups.size() < 2) throw InputError("collapse_score: need at least 2 classes");
    std::size_t dim = 0, total_points = 0;
    for (const auto& g : groups) {
        if (g.size() < 2) throw InputError("collapse_score: need at least 2 points per class");
        total_points += g.size();
        dim = g.front().size();
    }
    std::vector<double> grand(dim, 0.0);
    for (const auto& g : groups)
        for (const auto& p : g)
            for (std::size_t d = 0; d < dim; ++d) grand[d] += p[d];
    for (auto& v : grand) v /= static_cast<double>(total_points);

    double between = 0.0, total = 0.0;
    for (const auto& g : groups) {
        std::vector<double> mean(dim, 0.0);
        for (const auto& p : g)
            for (std::size_t d = 0; d < dim; ++d) mean[d] += p[d];
        for (auto& v : mean) v /= static_cast<double>(g.size());
        for (std::size_t d = 0; d < dim; ++d)
            between += static_cast<double>(g.size()) * (mean[d] - grand[d]) * (mean[d] - grand[d]);
        for (const auto& p : g)
            for (std::size_t d = 0; d < dim; ++d) total += (p[d] - grand[d]) * (p[d] - grand[d]);
    }
    if (total == 0.0) return 0.0;
    return between / total;
}

/// Additive attribute edit (jmvae_kl only): regenerate the label from x,
/// build mean reconstructions for the base and edited labels, and move x by
/// their difference. Mean-conditioned generation throughout.
template <typename T>
struct ShiftResult {
    int predicted_class = -1;
    std::vector<T> base_w, edited_w;
    std::vector<T> x_mean, x_mean_edited;
    std::vector<T> x_shifted_raw;  // before clamping
    std::vector<T> x_shifted;      // clamped to [0,1]
};

template <typename T>
ShiftResult<T> modality_shift(Model<T>& m, const std::vector<T>& x, std::optional<int> target_class,
                              const std::vector<T>* base_w_override = nullptr) {
    if (m.kind != ModelKind::jmvae_kl)
        throw UnsupportedOperation("modality_shift needs the unimodal encoders of jmvae_kl");
    if (x.size() != m.mx.dim) throw ShapeError("modality_shift expects a single x row");
    if (target_class && (*target_class < 0 || static_cast<std::size_t>(*target_class) >= m.mw.dim))
        throw ConfigError("modality_shift: target class out of range");

    ShiftResult<T> r;
    {
        // w from x via the x encoder's mean
        Tape<T> t;
        auto qx = m.net("q_x").forward(t, t.constant({1, m.mx.dim}, x));
        auto w_probs = m.net("dec_w").forward(t, qx.mean).mean.values();
        r.predicted_class = static_cast<int>(
            std::max_element(w_probs.begin(), w_probs.end()) - w_probs.begin());
    }
    r.base_w.assign(m.mw.dim, T(0));
    if (base_w_override) {
        if (base_w_override->size() != m.mw.dim) throw ShapeError("base w row has the wrong width");
        r.base_w = *base_w_override;
    } else {
        r.base_w[r.predicted_class] = T(1);
    }
    r.edited_w = r.base_w;
    if (target_class) {
        r.edited_w.assign(m.mw.dim, T(0));
        r.edited_w[*target_class] = T(1);
    }

    auto mean_reconstruction = [&](const std::vector<T>& w_row) {
        Tape<T> t;
        auto qw = m.net("q_w").forward(t, t.constant({1, m.mw.dim}, w_row));
        return m.net("dec_x").forward(t, qw.mean).mean.values();
    };
    r.x_mean = mean_reconstruction(r.base_w);
    r.x_mean_edited = mean_reconstruction(r.edited_w);

    r.x_shifted_raw.resize(m.mx.dim);
    r.x_shifted.resize(m.mx.dim);
    for (std::size_t j = 0; j < m.mx.dim; ++j) {
        // shift = x + (m' - m): an identity edit has delta exactly 0
        const T delta = r.x_mean_edited[j] - r.x_mean[j];
        r.x_shifted_raw[j] = x[j] + delta;
        r.x_shifted[j] = std::min(std::max(r.x_shifted_raw[j], T(0)), T(1));
    }
    return r;
}

}  // namespace jmvl
