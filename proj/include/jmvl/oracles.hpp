#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "jmvl/gradcheck.hpp"
#include "jmvl/infer.hpp"
#include "jmvl/models.hpp"
#include "jmvl/train.hpp"

namespace jmvl {

// ---------------------------------------------------------------------------
// Dense quadrature over 1-dim latents. These integrate the same densities the
// sampling estimators draw from, through a separate numeric route, and back
// the estimator-soundness checks.
// ---------------------------------------------------------------------------

namespace quad {

inline double log_normal_pdf(double z, double mu, double var) {
    double d = z - mu;
    return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

/// log sum_i w_i exp(a_i) with max-shift stabilization.
inline double log_weighted_sum_exp(const std::vector<double>& a, const std::vector<double>& w) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : a) mx = std::max(mx, v);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * std::exp(a[i] - mx);
    return mx + std::log(s);
}

/// Decoder log densities over a 1-dim code grid: returns log p(target|z_i).
template <typename T>
std::vector<double> decoder_log_density_grid(const Network<T>& dec, ModalityKind kind,
                                             const std::vector<double>& grid,
                                             const std::vector<float>& target) {
    const std::size_t g = grid.size();
    std::vector<T> codes(g);
    for (std::size_t i = 0; i < g; ++i) codes[i] = static_cast<T>(grid[i]);
    Tape<T> t;
    auto mean = dec.forward(t, t.constant({g, 1}, codes)).mean.values();
    const std::size_t dim = target.size();
    std::vector<double> out(g);
    std::vector<float> row(dim);
    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t j = 0; j < dim; ++j) row[j] = static_cast<float>(mean[i * dim + j]);
        out[i] = detail::log_density_row(kind, row.data(), target.data(), dim);
    }
    return out;
}

inline std::vector<double> make_grid(double lo, double hi, std::size_t points) {
    std::vector<double> g(points);
    double step = (hi - lo) / static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i) g[i] = lo + step * i;
    return g;
}

inline std::vector<double> trapezoid_weights(std::size_t points, double step) {
    std::vector<double> w(points, step);
    w.front() = 0.5 * step;
    w.back() = 0.5 * step;
    return w;
}

/// log ∫ N(z; mu, var) p(target|z) dz on a dense 1-dim grid.
template <typename T>
double log_marginal_1d(const Network<T>& dec, ModalityKind kind, double mu, double var,
                       const std::vector<float>& target, std::size_t points = 4001,
                       double span_sigmas = 10.0) {
    double sd = std::sqrt(var);
    auto grid = make_grid(mu - span_sigmas * sd, mu + span_sigmas * sd, points);
    auto weights = trapezoid_weights(points, grid[1] - grid[0]);
    auto logp = decoder_log_density_grid(dec, kind, grid, target);
    std::vector<double> a(points);
    for (std::size_t i = 0; i < points; ++i) a[i] = log_normal_pdf(grid[i], mu, var) + logp[i];
    return log_weighted_sum_exp(a, weights);
}

/// Single-Jensen value for the hierarchical model:
/// ∫ N(z2; mu2, var2) log[ ∫ N(z1; pm(z2), pv(z2)) p(target|z1) dz1 ] dz2.
template <typename T>
double single_level_hier_1d(Model<T>& m, Direction dir, double mu2, double var2,
                            const std::vector<float>& target, std::size_t points = 1501,
                            double span_sigmas = 9.0) {
    const Network<T>& dec = m.net(dir == Direction::x_given_w ? "dec_x" : "dec_w");
    const ModalityKind kind = dir == Direction::x_given_w ? m.mx.kind : m.mw.kind;
    double sd2 = std::sqrt(var2);
    auto z2_grid = make_grid(mu2 - span_sigmas * sd2, mu2 + span_sigmas * sd2, points);
    auto z2_weights = trapezoid_weights(points, z2_grid[1] - z2_grid[0]);

    // p(z1|z2) parameters over the z2 grid
    std::vector<T> z2_codes(points);
    for (std::size_t i = 0; i < points; ++i) z2_codes[i] = static_cast<T>(z2_grid[i]);
    std::vector<double> pm(points), pv(points);
    {
        Tape<T> t;
        auto prior = m.net("p_z1_z2").forward(t, t.constant({points, 1}, z2_codes));
        for (std::size_t i = 0; i < points; ++i) {
            pm[i] = static_cast<double>(prior.mean.values()[i]);
            pv[i] = static_cast<double>(prior.var.values()[i]);
        }
    }
    double z1_lo = pm[0], z1_hi = pm[0];
    for (std::size_t i = 0; i < points; ++i) {
        z1_lo = std::min(z1_lo, pm[i] - span_sigmas * std::sqrt(pv[i]));
        z1_hi = std::max(z1_hi, pm[i] + span_sigmas * std::sqrt(pv[i]));
    }
    auto z1_grid = make_grid(z1_lo, z1_hi, points);
    auto z1_weights = trapezoid_weights(points, z1_grid[1] - z1_grid[0]);
    auto logp = decoder_log_density_grid(dec, kind, z1_grid, target);

    double outer = 0.0;
    std::vector<double> a(points);
    for (std::size_t i = 0; i < points; ++i) {
        for (std::size_t j = 0; j < points; ++j)
            a[j] = log_normal_pdf(z1_grid[j], pm[i], pv[i]) + logp[j];
        double inner_log = log_weighted_sum_exp(a, z1_weights);
        outer += z2_weights[i] * std::exp(log_normal_pdf(z2_grid[i], mu2, var2)) * inner_log;
    }
    return outer;
}

}  // namespace quad

// ---------------------------------------------------------------------------
// Self-check suite: gradient checks, analytic-vs-MC KL checks, and the
// quadrature estimator checks. The CLI `selftest` verb and the acceptance
// harness both drive these, at different sizes.
// ---------------------------------------------------------------------------

namespace selfcheck {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Finite-difference checks on every primitive and every bound.
inline std::vector<CheckResult> gradient_checks(std::size_t configs, std::uint64_t seed) {
    std::vector<CheckResult> results;
    Rng rng(seed);

    auto rand_param = [&rng](const std::string& name, Shape shape, double lo, double hi) {
        Parameter<double> p(name, std::move(shape));
        for (auto& v : p.value) v = rng.uniform(lo, hi);
        return p;
    };
    auto offset_param = [&rng](const std::string& name, Shape shape) {
        Parameter<double> p(name, std::move(shape));
        for (auto& v : p.value) {
            double mag = rng.uniform(0.1, 2.0);
            v = rng.uniform() < 0.5 ? -mag : mag;
        }
        return p;
    };
    auto weighted_loss = [&rng](Tape<double>& t, const Tensor<double>& y) {
        std::vector<double> w(y.numel());
        Rng wr(rng.bits());
        for (auto& v : w) {
            double mag = wr.uniform(0.5, 1.5);
            v = wr.uniform() < 0.5 ? -mag : mag;
        }
        return t.sum_all(t.mul(y, t.constant(y.shape(), w)));
    };

    double worst_prim = 0.0;
    std::string worst_prim_name;
    auto run_prim = [&](const char* name, auto&& build, std::vector<Parameter<double>*> ps) {
        auto f = [&](Tape<double>& t) { return weighted_loss(t, build(t)); };
        double err = finite_diff_check(f, ps, 1e-5);
        if (err > worst_prim) {
            worst_prim = err;
            worst_prim_name = name;
        }
    };
    for (std::size_t c = 0; c < configs; ++c) {
        std::size_t mrows = 1 + rng.below(4), k = 1 + rng.below(4), ncols = 1 + rng.below(4);
        {
            auto a = rand_param("a", {mrows, k}, -2, 2);
            auto b = rand_param("b", {k, ncols}, -2, 2);
            run_prim("matmul", [&](Tape<double>& t) { return t.matmul(t.leaf(a), t.leaf(b)); },
                     {&a, &b});
        }
        {
            auto a = rand_param("a", {mrows, ncols}, -2, 2);
            auto b = rand_param("b", {ncols}, -2, 2);
            run_prim("add", [&](Tape<double>& t) { return t.add(t.leaf(a), t.leaf(b)); }, {&a, &b});
        }
        {
            auto a = rand_param("a", {mrows, ncols}, -2, 2);
            auto b = rand_param("b", {mrows, ncols}, -2, 2);
            run_prim("mul", [&](Tape<double>& t) { return t.mul(t.leaf(a), t.leaf(b)); }, {&a, &b});
        }
        {
            auto a = rand_param("a", {mrows, ncols}, -2, 2);
            auto b = offset_param("b", {mrows, ncols});
            run_prim("div", [&](Tape<double>& t) { return t.div(t.leaf(a), t.leaf(b)); }, {&a, &b});
        }
        {
            auto a = rand_param("a", {mrows, ncols}, -1, 1);
            run_prim("exp", [&](Tape<double>& t) { return t.exp(t.leaf(a)); }, {&a});
        }
        {
            auto a = rand_param("a", {mrows, ncols}, 0.2, 3.0);
            run_prim("log", [&](Tape<double>& t) { return t.log(t.leaf(a)); }, {&a});
            run_prim("sqrt", [&](Tape<double>& t) { return t.sqrt(t.leaf(a)); }, {&a});
        }
        {
            auto a = rand_param("a", {mrows, ncols}, -2, 2);
            run_prim("square", [&](Tape<double>& t) { return t.square(t.leaf(a)); }, {&a});
            run_prim("sigmoid", [&](Tape<double>& t) { return t.sigmoid(t.leaf(a)); }, {&a});
            run_prim("softplus", [&](Tape<double>& t) { return t.softplus(t.leaf(a)); }, {&a});
            run_prim("softmax_rows",
                     [&](Tape<double>& t) { return t.softmax_rows(t.leaf(a)); }, {&a});
            run_prim("sum_rows", [&](Tape<double>& t) { return t.sum_rows(t.leaf(a)); }, {&a});
            run_prim("scale", [&](Tape<double>& t) { return t.scale(t.leaf(a), 1.3); }, {&a});
            run_prim("add_scalar",
                     [&](Tape<double>& t) { return t.add_scalar(t.leaf(a), -0.7); }, {&a});
        }
        {
            auto a = offset_param("a", {mrows, ncols});
            run_prim("relu", [&](Tape<double>& t) { return t.relu(t.leaf(a)); }, {&a});
        }
        {
            auto a = rand_param("a", {mrows, ncols}, -0.8, 0.8);
            run_prim("clamp", [&](Tape<double>& t) { return t.clamp(t.leaf(a), -1.0, 1.0); }, {&a});
        }
        {
            auto a = rand_param("a", {mrows, k}, -2, 2);
            auto b = rand_param("b", {mrows, ncols}, -2, 2);
            run_prim("concat_cols",
                     [&](Tape<double>& t) { return t.concat_cols(t.leaf(a), t.leaf(b)); }, {&a, &b});
            run_prim("slice_cols",
                     [&](Tape<double>& t) { return t.slice_cols(t.leaf(b), 0, ncols); }, {&b});
        }
        {
            auto a = rand_param("a", {mrows, ncols}, -2, 2);
            auto f_sum = [&](Tape<double>& t) { return t.sum_all(t.square(t.leaf(a))); };
            double err = finite_diff_check(f_sum, {&a}, 1e-5);
            if (err > worst_prim) worst_prim = err, worst_prim_name = "sum_all";
            auto f_mean = [&](Tape<double>& t) { return t.mean_all(t.square(t.leaf(a))); };
            err = finite_diff_check(f_mean, {&a}, 1e-5);
            if (err > worst_prim) worst_prim = err, worst_prim_name = "mean_all";
        }
    }
    results.push_back({"primitive gradients vs central differences", worst_prim < 1e-4,
                       "max rel err " + std::to_string(worst_prim) + " (" + worst_prim_name + ")"});

    // full bounds on tiny models
    ModelArchs archs;
    archs.enc_joint = "(D5R, D4R)";
    archs.enc_x = "D5R";
    archs.enc_w = "D4R";
    archs.dec_x = "D5R";
    archs.dec_w = "D4R";
    archs.h2_tail = "D3R";
    archs.prior_z1 = "D4R";
    const ModelKind kinds[] = {ModelKind::vae, ModelKind::jmvae, ModelKind::jmvae_kl,
                               ModelKind::jmvae_h, ModelKind::cvae};
    for (ModelKind kind : kinds) {
        double worst = 0.0;
        for (std::size_t c = 0; c < configs; ++c) {
            ModalityKind xkind =
                kind == ModelKind::cvae ? ModalityKind::fixed_var_gaussian : ModalityKind::bernoulli;
            auto m = build_model<double>(kind, {xkind, 5}, {ModalityKind::categorical, 3}, 2, 2,
                                         archs, true, rng.bits());
            for (auto* p : m.parameters())
                for (auto& v : p->value) v = rng.uniform(-0.6, 0.6);
            Minibatch<double> batch;
            batch.n = 3;
            batch.x.resize(batch.n * 5);
            batch.w.assign(batch.n * 3, 0.0);
            if (xkind == ModalityKind::bernoulli)
                for (auto& v : batch.x) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
            else
                for (auto& v : batch.x) v = rng.uniform(-1.5, 1.5);
            for (std::size_t i = 0; i < batch.n; ++i) batch.w[i * 3 + rng.below(3)] = 1.0;
            Rng nrng(rng.bits());
            auto noise = make_noise(m, batch.n, 1, nrng);
            double beta = rng.uniform(0.1, 1.0);
            auto f = [&](Tape<double>& t) {
                return elbo(t, m, batch, beta, noise).loss;
            };
            worst = std::max(worst, finite_diff_check(f, m.parameters(), 1e-5));
        }
        results.push_back({std::string("bound gradient (") + model_kind_name(kind) + ")",
                           worst < 1e-4, "max rel err " + std::to_string(worst)});
    }
    return results;
}

/// Analytic KL vs Monte Carlo within 3 standard errors; exact zero at
/// coincidence.
inline std::vector<CheckResult> kl_mc_checks(std::size_t pairs, std::size_t samples,
                                             std::uint64_t seed) {
    std::vector<CheckResult> results;
    Rng prng(seed);
    Rng srng(derive_seed(seed, {0x6d63}));
    const std::size_t dim = 8;
    double worst_gap_se = 0.0;
    bool pass = true;
    for (std::size_t rep = 0; rep < pairs; ++rep) {
        std::vector<double> mu_q(dim), var_q(dim), mu_p(dim), var_p(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            mu_q[i] = prng.uniform(-1.5, 1.5);
            var_q[i] = prng.uniform(0.2, 2.5);
            mu_p[i] = prng.uniform(-1.5, 1.5);
            var_p[i] = prng.uniform(0.2, 2.5);
        }
        Tape<double> t;
        DiagGaussianParams<double> q{t.constant({1, dim}, mu_q), t.constant({1, dim}, var_q)};
        DiagGaussianParams<double> p{t.constant({1, dim}, mu_p), t.constant({1, dim}, var_p)};
        double analytic_qp = kl_diag_gaussians(q, p).values()[0];
        double analytic_q0 = kl_to_std_normal(q).values()[0];

        auto mc = [&](const std::vector<double>& mp, const std::vector<double>& vp) {
            double sum = 0, sumsq = 0;
            for (std::size_t s = 0; s < samples; ++s) {
                double term = 0;
                for (std::size_t i = 0; i < dim; ++i) {
                    double z = mu_q[i] + std::sqrt(var_q[i]) * srng.normal();
                    term += quad::log_normal_pdf(z, mu_q[i], var_q[i]) -
                            quad::log_normal_pdf(z, mp[i], vp[i]);
                }
                sum += term;
                sumsq += term * term;
            }
            double mean = sum / static_cast<double>(samples);
            double var =
                (sumsq - sum * sum / static_cast<double>(samples)) / static_cast<double>(samples - 1);
            return std::pair{mean, std::sqrt(var / static_cast<double>(samples))};
        };
        auto [mc_qp, se_qp] = mc(mu_p, var_p);
        auto [mc_q0, se_q0] = mc(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0));
        worst_gap_se = std::max(worst_gap_se, std::abs(analytic_qp - mc_qp) / se_qp);
        worst_gap_se = std::max(worst_gap_se, std::abs(analytic_q0 - mc_q0) / se_q0);
        if (std::abs(analytic_qp - mc_qp) >= 3 * se_qp) pass = false;
        if (std::abs(analytic_q0 - mc_q0) >= 3 * se_q0) pass = false;
    }
    results.push_back({"analytic KL vs Monte Carlo (3 SE)", pass,
                       "worst gap " + std::to_string(worst_gap_se) + " SE over " +
                           std::to_string(pairs) + " pairs"});
    {
        Tape<double> t;
        std::vector<double> mu = {0.3, -0.7}, var = {1.4, 0.6};
        DiagGaussianParams<double> q{t.constant({1, 2}, mu), t.constant({1, 2}, var)};
        DiagGaussianParams<double> p{t.constant({1, 2}, mu), t.constant({1, 2}, var)};
        DiagGaussianParams<double> s{t.constant({1, 2}, {0.0, 0.0}), t.constant({1, 2}, {1.0, 1.0})};
        bool zero = kl_diag_gaussians(q, p).values()[0] == 0.0 &&
                    kl_to_std_normal(s).values()[0] == 0.0;
        results.push_back({"KL exactly zero at coincidence", zero, ""});
    }
    return results;
}

/// Toy models with 1-dim latents used by the estimator checks.
struct ToyModels {
    BimodalDataset test;
    Model<float> jm_kl;
    Model<float> jm_h;
};

inline ToyModels trained_toy_models(std::uint64_t seed) {
    std::string text = R"(
dataset = toy
toy_clusters = 2
toy_x_dim = 1
toy_items = 400
toy_test_items = 50
latent_dim = 1
latent_dim2 = 1
arch_enc_joint = (D8R, D8R)
arch_enc_x = D8R
arch_enc_w = D8R
arch_dec_x = D8R
arch_dec_w = D8R
arch_h2_tail = D4R
arch_prior_z1 = D4R
lr = 3e-3
epochs = 40
warmup_epochs = 10
batch_size = 50
)";
    auto base = parse_kv_text(text);
    base["toy_seed"] = std::to_string(seed & 0xffff);
    base["seed"] = std::to_string(seed);
    auto kv_kl = base;
    kv_kl["model"] = "jmvae_kl";
    auto kv_h = base;
    kv_h["model"] = "jmvae_h";
    TrainConfig cfg_kl = config_from_map(kv_kl);
    TrainConfig cfg_h = config_from_map(kv_h);
    auto data = load_datasets(cfg_kl);
    auto r_kl = train_model(cfg_kl, data.train);
    auto r_h = train_model(cfg_h, data.train);
    return {std::move(data.test), std::move(r_kl.model), std::move(r_h.model)};
}

/// Estimator soundness on the 1-dim toy: the sample approximation must sit
/// at or below the quadrature value of the log marginal (Jensen direction),
/// and the nested hierarchical estimator at or below the single-level value.
inline std::vector<CheckResult> estimator_checks(std::size_t replications, std::uint64_t seed) {
    std::vector<CheckResult> results;
    ToyModels toy = trained_toy_models(seed);
    const std::size_t item = 0;
    BimodalDataset one = dataset_head(toy.test, 1);
    (void)item;

    {  // single-level: q(z|w) is the jmvae_kl unimodal encoder
        std::vector<float> w_row(one.w.begin(), one.w.begin() + one.w_dim);
        std::vector<float> target(one.x.begin(), one.x.begin() + one.x_dim);
        std::vector<float> mu, var;
        detail::encode_block(toy.jm_kl.net("q_w"), w_row, 1, one.w_dim, mu, var);
        double quad_value = quad::log_marginal_1d(toy.jm_kl.net("dec_x"), toy.jm_kl.mx.kind,
                                                  mu[0], var[0], target);
        double sum = 0, sumsq = 0;
        CllOptions opt;
        opt.n_samples = 10;
        for (std::size_t r = 0; r < replications; ++r) {
            CllEstimate e =
                cond_loglik(toy.jm_kl, one, Direction::x_given_w, derive_seed(seed, {0xe5, r}), opt);
            sum += e.value;
            sumsq += e.value * e.value;
        }
        double mean = sum / static_cast<double>(replications);
        double var_est = (sumsq - sum * sum / static_cast<double>(replications)) /
                         static_cast<double>(replications - 1);
        double se = std::sqrt(var_est / static_cast<double>(replications));
        bool pass = mean <= quad_value + 3 * se;
        results.push_back({"sample estimator <= quadrature log-marginal", pass,
                           "estimate " + std::to_string(mean) + " vs quadrature " +
                               std::to_string(quad_value) + " (se " + std::to_string(se) + ")"});
    }

    {  // nested hierarchical estimator vs the single-Jensen quadrature value
        std::vector<float> w_row(one.w.begin(), one.w.begin() + one.w_dim);
        std::vector<float> target(one.x.begin(), one.x.begin() + one.x_dim);
        CllOptions opt;
        opt.n_samples = 10;
        // freeze the chain the estimator uses so the quadrature integrates
        // the exact same top-layer posterior
        std::vector<Rng> rngs;
        rngs.emplace_back(derive_seed(seed, {kTagEval, std::uint64_t{0}}));
        auto fin = detail::run_chain_block(toy.jm_h, w_row, 1, MissingModality::x,
                                           opt.chain_iterations, opt.init, rngs);
        double single_level = quad::single_level_hier_1d(toy.jm_h, Direction::x_given_w,
                                                         fin.mu2[0], fin.var2[0], target);
        // replicate the nested sampling stage from the frozen posterior
        Rng srng(derive_seed(seed, {0xe6}));
        double sum = 0, sumsq = 0;
        const std::size_t N = opt.n_samples;
        for (std::size_t r = 0; r < replications; ++r) {
            double est = 0;
            for (std::size_t l = 0; l < N; ++l) {
                double z2 = fin.mu2[0] + std::sqrt(fin.var2[0]) * srng.normal();
                Tape<float> t;
                auto prior = toy.jm_h.net("p_z1_z2").forward(
                    t, t.constant({1, 1}, {static_cast<float>(z2)}));
                double pm = prior.mean.values()[0], pv = prior.var.values()[0];
                std::vector<float> z1(N);
                for (std::size_t k = 0; k < N; ++k)
                    z1[k] = static_cast<float>(pm + std::sqrt(pv) * srng.normal());
                auto dmean =
                    toy.jm_h.net("dec_x").forward(t, t.constant({N, 1}, z1)).mean.values();
                double inner = 0;
                for (std::size_t k = 0; k < N; ++k) {
                    float mrow = dmean[k];
                    inner += detail::log_density_row(toy.jm_h.mx.kind, &mrow, target.data(), 1);
                }
                est += inner / static_cast<double>(N);
            }
            est /= static_cast<double>(N);
            sum += est;
            sumsq += est * est;
        }
        double mean = sum / static_cast<double>(replications);
        double var_est = (sumsq - sum * sum / static_cast<double>(replications)) /
                         static_cast<double>(replications - 1);
        double se = std::sqrt(var_est / static_cast<double>(replications));
        bool pass = mean <= single_level + 3 * se;
        results.push_back({"nested hierarchical estimator <= single-level quadrature", pass,
                           "estimate " + std::to_string(mean) + " vs single-level " +
                               std::to_string(single_level) + " (se " + std::to_string(se) + ")"});
        // the full production estimator should respect the same ceiling
        CllEstimate full =
            cond_loglik_hier(toy.jm_h, one, Direction::x_given_w, seed, opt);
        results.push_back({"production nested estimator within its ceiling",
                           full.value <= single_level + 3 * full.std_error + 1e-9,
                           "estimate " + std::to_string(full.value)});
    }
    return results;
}

inline std::vector<CheckResult> run_selftest(std::uint64_t seed = 2026) {
    std::vector<CheckResult> all;
    for (auto& r : gradient_checks(5, derive_seed(seed, {1}))) all.push_back(std::move(r));
    for (auto& r : kl_mc_checks(8, 20000, derive_seed(seed, {2}))) all.push_back(std::move(r));
    for (auto& r : estimator_checks(400, derive_seed(seed, {3}))) all.push_back(std::move(r));
    return all;
}

}  // namespace selfcheck

}  // namespace jmvl
