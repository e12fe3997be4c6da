#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "jmvl/dists.hpp"
#include "jmvl/gradcheck.hpp"
#include "jmvl/rng.hpp"

using namespace jmvl;

namespace {

// Plain-formula log densities, kept separate from the tape path on purpose:
// they are the Monte Carlo oracle's side of the comparison.
double ref_log_normal(double x, double mu, double var) {
    double d = x - mu;
    return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

struct GaussianPair {
    std::vector<double> mu_q, var_q, mu_p, var_p;
};

// E_q[log q - log p] by sampling, with standard error of the mean.
std::pair<double, double> mc_kl(const GaussianPair& g, std::size_t n_samples, Rng& rng) {
    const std::size_t d = g.mu_q.size();
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        double t = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double z = g.mu_q[i] + std::sqrt(g.var_q[i]) * rng.normal();
            t += ref_log_normal(z, g.mu_q[i], g.var_q[i]) - ref_log_normal(z, g.mu_p[i], g.var_p[i]);
        }
        sum += t;
        sumsq += t * t;
    }
    double mean = sum / static_cast<double>(n_samples);
    double sample_var =
        (sumsq - sum * sum / static_cast<double>(n_samples)) / static_cast<double>(n_samples - 1);
    double se = std::sqrt(sample_var / static_cast<double>(n_samples));
    return {mean, se};
}

DiagGaussianParams<double> gauss_on_tape(Tape<double>& t, const std::vector<double>& mu,
                                         const std::vector<double>& var, std::size_t b, std::size_t d) {
    return {t.constant({b, d}, mu), t.constant({b, d}, var)};
}

}  // namespace

TEST_CASE("log_prob closed-form spot checks") {
    Tape<double> t;
    SECTION("uniform coin") {
        BernoulliParams<double> d{t.constant({1, 1}, {0.5})};
        auto lp = log_prob(d, t.constant({1, 1}, {1.0}));
        REQUIRE_THAT(lp.values()[0], Catch::Matchers::WithinAbs(std::log(0.5), 1e-9));
    }
    SECTION("uniform categorical") {
        std::vector<double> mu(10, 0.1);
        CategoricalParams<double> d{t.constant({1, 10}, mu)};
        std::vector<double> onehot(10, 0.0);
        onehot[3] = 1.0;
        auto lp = log_prob(d, t.constant({1, 10}, onehot));
        REQUIRE_THAT(lp.values()[0], Catch::Matchers::WithinAbs(std::log(0.1), 1e-9));
    }
    SECTION("standard normal at the peak") {
        auto d = gauss_on_tape(t, {0.0}, {1.0}, 1, 1);
        auto lp = log_prob(d, t.constant({1, 1}, {0.0}));
        REQUIRE_THAT(lp.values()[0], Catch::Matchers::WithinAbs(-0.5 * kLog2Pi, 1e-12));
    }
    SECTION("fixed-variance gaussian matches var=1 gaussian") {
        FixedVarGaussianParams<double> f{t.constant({1, 2}, {0.3, -0.7})};
        auto dg = gauss_on_tape(t, {0.3, -0.7}, {1.0, 1.0}, 1, 2);
        auto v = t.constant({1, 2}, {0.1, 0.5});
        REQUIRE_THAT(log_prob(f, v).values()[0],
                     Catch::Matchers::WithinAbs(log_prob(dg, v).values()[0], 1e-12));
    }
}

TEST_CASE("log_prob support errors") {
    Tape<double> t;
    BernoulliParams<double> b{t.constant({1, 2}, {0.5, 0.5})};
    REQUIRE_THROWS_AS(log_prob(b, t.constant({1, 2}, {0.5, 1.0})), SupportError);
    CategoricalParams<double> c{t.constant({1, 3}, {0.2, 0.3, 0.5})};
    REQUIRE_THROWS_AS(log_prob(c, t.constant({1, 3}, {1.0, 1.0, 0.0})), SupportError);
    REQUIRE_THROWS_AS(log_prob(c, t.constant({1, 3}, {0.0, 0.0, 0.0})), SupportError);
}

TEST_CASE("categorical log_prob normalizes over the support") {
    Tape<double> t;
    Rng rng(12);
    std::vector<double> logits(8);
    for (auto& v : logits) v = rng.uniform(-2.0, 2.0);
    auto mu = t.softmax_rows(t.constant({1, 8}, logits));
    CategoricalParams<double> d{mu};
    double total = 0.0;
    for (std::size_t k = 0; k < 8; ++k) {
        std::vector<double> onehot(8, 0.0);
        onehot[k] = 1.0;
        total += std::exp(log_prob(d, t.constant({1, 8}, onehot)).values()[0]);
    }
    REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("rsample") {
    Tape<double> t;
    SECTION("zero noise returns the mean") {
        auto q = gauss_on_tape(t, {0.4, -1.2}, {2.0, 0.5}, 1, 2);
        auto z = rsample(q, t.constant({1, 2}, {0.0, 0.0}));
        REQUIRE(z.values() == std::vector<double>{0.4, -1.2});
    }
    SECTION("standard parameters pass the noise through") {
        auto q = gauss_on_tape(t, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, 1, 3);
        auto z = rsample(q, t.constant({1, 3}, {0.3, -0.8, 2.0}));
        REQUIRE(z.values() == std::vector<double>{0.3, -0.8, 2.0});
    }
    SECTION("shape mismatch") {
        auto q = gauss_on_tape(t, {0.0}, {1.0}, 1, 1);
        REQUIRE_THROWS_AS(rsample(q, t.constant({1, 2}, {0.0, 0.0})), ShapeError);
    }
    SECTION("empirical moments match at 1e5 samples") {
        const double mu = 0.7, var = 1.9;
        const std::size_t n = 100000;
        Rng rng(2024);
        Tape<double> tt;
        auto q = gauss_on_tape(tt, {mu}, {var}, 1, 1);
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = rsample(q, tt.constant({1, 1}, {rng.normal()})).values()[0];
            sum += z;
            sumsq += z * z;
        }
        double m = sum / n;
        double v = sumsq / n - m * m;
        double se_mean = std::sqrt(var / n);
        double se_var = var * std::sqrt(2.0 / (n - 1));
        REQUIRE(std::abs(m - mu) < 3 * se_mean);
        REQUIRE(std::abs(v - var) < 3 * se_var);
    }
    SECTION("gradient flows to mu and var, not eps") {
        Parameter<double> mu("mu", {1, 2});
        mu.value = {0.2, -0.3};
        Parameter<double> var("var", {1, 2});
        var.value = {1.5, 0.7};
        Tape<double> t2;
        DiagGaussianParams<double> q{t2.leaf(mu), t2.leaf(var)};
        auto eps = t2.constant({1, 2}, {0.5, -1.0});
        auto loss = t2.sum_all(rsample(q, eps));
        auto grads = t2.backward(loss);
        REQUIRE(grads.contains(mu));
        REQUIRE(grads.contains(var));
        REQUIRE(grads.grad(mu) == std::vector<double>{1.0, 1.0});
    }
}

TEST_CASE("KL closed forms") {
    Tape<double> t;
    SECTION("coincident distributions give exactly zero") {
        auto q = gauss_on_tape(t, {0.0, 1.0}, {1.0, 2.0}, 1, 2);
        auto p = gauss_on_tape(t, {0.0, 1.0}, {1.0, 2.0}, 1, 2);
        REQUIRE(kl_diag_gaussians(q, p).values()[0] == 0.0);
        auto std_q = gauss_on_tape(t, {0.0}, {1.0}, 1, 1);
        REQUIRE(kl_to_std_normal(std_q).values()[0] == 0.0);
    }
    SECTION("unit mean shift costs 0.5 nats") {
        auto q = gauss_on_tape(t, {1.0}, {1.0}, 1, 1);
        REQUIRE_THAT(kl_to_std_normal(q).values()[0], Catch::Matchers::WithinAbs(0.5, 1e-12));
        auto q0 = gauss_on_tape(t, {0.0}, {1.0}, 1, 1);
        auto p1 = gauss_on_tape(t, {1.0}, {1.0}, 1, 1);
        REQUIRE_THAT(kl_diag_gaussians(q0, p1).values()[0], Catch::Matchers::WithinAbs(0.5, 1e-12));
    }
    SECTION("kl_diag_gaussians reduces to kl_to_std_normal at the prior") {
        Rng rng(3);
        for (int i = 0; i < 20; ++i) {
            std::vector<double> mu(4), var(4);
            for (auto& v : mu) v = rng.uniform(-2.0, 2.0);
            for (auto& v : var) v = rng.uniform(0.1, 3.0);
            auto q = gauss_on_tape(t, mu, var, 1, 4);
            auto p = gauss_on_tape(t, std::vector<double>(4, 0.0), std::vector<double>(4, 1.0), 1, 4);
            REQUIRE_THAT(kl_diag_gaussians(q, p).values()[0],
                         Catch::Matchers::WithinAbs(kl_to_std_normal(q).values()[0], 1e-12));
        }
    }
}

TEST_CASE("KL nonnegativity at random perturbations") {
    Rng rng(41);
    Tape<double> t;
    for (int i = 0; i < 100; ++i) {
        std::vector<double> mu_q(6), var_q(6), mu_p(6), var_p(6);
        for (std::size_t j = 0; j < 6; ++j) {
            mu_q[j] = rng.uniform(-3.0, 3.0);
            var_q[j] = rng.uniform(0.05, 4.0);
            mu_p[j] = mu_q[j] + rng.uniform(-1.0, 1.0);
            var_p[j] = var_q[j] * rng.uniform(0.5, 2.0);
        }
        auto q = gauss_on_tape(t, mu_q, var_q, 1, 6);
        auto p = gauss_on_tape(t, mu_p, var_p, 1, 6);
        REQUIRE(kl_diag_gaussians(q, p).values()[0] >= 0.0);
        REQUIRE(kl_to_std_normal(q).values()[0] >= 0.0);
    }
}

TEST_CASE("analytic KL agrees with the Monte Carlo oracle") {
    Rng param_rng(77);
    Rng sample_rng(78);
    const std::size_t dim = 8, n_samples = 100000;
    for (int rep = 0; rep < 5; ++rep) {
        GaussianPair g;
        g.mu_q.resize(dim), g.var_q.resize(dim), g.mu_p.resize(dim), g.var_p.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            g.mu_q[i] = param_rng.uniform(-1.5, 1.5);
            g.var_q[i] = param_rng.uniform(0.2, 2.5);
            g.mu_p[i] = param_rng.uniform(-1.5, 1.5);
            g.var_p[i] = param_rng.uniform(0.2, 2.5);
        }
        Tape<double> t;
        auto q = gauss_on_tape(t, g.mu_q, g.var_q, 1, dim);
        auto p = gauss_on_tape(t, g.mu_p, g.var_p, 1, dim);
        double analytic = kl_diag_gaussians(q, p).values()[0];
        auto [mc, se] = mc_kl(g, n_samples, sample_rng);
        INFO("rep " << rep << " analytic " << analytic << " mc " << mc << " se " << se);
        REQUIRE(std::abs(analytic - mc) < 3.0 * se);

        GaussianPair gs = g;
        gs.mu_p.assign(dim, 0.0);
        gs.var_p.assign(dim, 1.0);
        double analytic_std = kl_to_std_normal(q).values()[0];
        auto [mc_std, se_std] = mc_kl(gs, n_samples, sample_rng);
        REQUIRE(std::abs(analytic_std - mc_std) < 3.0 * se_std);
    }
}

TEST_CASE("distribution gradients pass the finite-difference oracle") {
    Rng rng(55);
    const std::size_t b = 2, d = 3;

    Parameter<double> mu("mu", {b, d});
    Parameter<double> raw_var("raw_var", {b, d});
    Parameter<double> mu_p("mu_p", {b, d});
    Parameter<double> raw_var_p("raw_var_p", {b, d});
    for (auto* p : {&mu, &raw_var, &mu_p, &raw_var_p})
        for (auto& v : p->value) v = rng.uniform(-1.0, 1.0);

    std::vector<double> eps_data(b * d), value_data(b * d);
    for (auto& v : eps_data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : value_data) v = rng.uniform(-1.0, 1.0);

    auto gauss_q = [&](Tape<double>& t) -> DiagGaussianParams<double> {
        return {t.leaf(mu), t.add_scalar(t.softplus(t.leaf(raw_var)), kVarFloor)};
    };
    auto gauss_p = [&](Tape<double>& t) -> DiagGaussianParams<double> {
        return {t.leaf(mu_p), t.add_scalar(t.softplus(t.leaf(raw_var_p)), kVarFloor)};
    };

    SECTION("gaussian log_prob") {
        auto f = [&](Tape<double>& t) {
            return t.mean_all(log_prob(gauss_q(t), t.constant({b, d}, value_data)));
        };
        REQUIRE(finite_diff_check(f, {&mu, &raw_var}, 1e-5) < 1e-4);
    }
    SECTION("bernoulli log_prob through the sigmoid head") {
        std::vector<double> bits(b * d);
        for (auto& v : bits) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        auto f = [&](Tape<double>& t) {
            BernoulliParams<double> dist{t.sigmoid(t.leaf(mu))};
            return t.mean_all(log_prob(dist, t.constant({b, d}, bits)));
        };
        REQUIRE(finite_diff_check(f, {&mu}, 1e-5) < 1e-4);
    }
    SECTION("categorical log_prob through the softmax head") {
        std::vector<double> onehot(b * d, 0.0);
        onehot[0 * d + 1] = 1.0;
        onehot[1 * d + 2] = 1.0;
        auto f = [&](Tape<double>& t) {
            CategoricalParams<double> dist{t.softmax_rows(t.leaf(mu))};
            return t.mean_all(log_prob(dist, t.constant({b, d}, onehot)));
        };
        REQUIRE(finite_diff_check(f, {&mu}, 1e-5) < 1e-4);
    }
    SECTION("rsample then decode") {
        auto f = [&](Tape<double>& t) {
            auto z = rsample(gauss_q(t), t.constant({b, d}, eps_data));
            return t.mean_all(t.square(z));
        };
        REQUIRE(finite_diff_check(f, {&mu, &raw_var}, 1e-5) < 1e-4);
    }
    SECTION("kl_to_std_normal") {
        auto f = [&](Tape<double>& t) { return t.mean_all(kl_to_std_normal(gauss_q(t))); };
        REQUIRE(finite_diff_check(f, {&mu, &raw_var}, 1e-5) < 1e-4);
    }
    SECTION("kl_diag_gaussians reaches both sides") {
        auto f = [&](Tape<double>& t) {
            return t.mean_all(kl_diag_gaussians(gauss_q(t), gauss_p(t)));
        };
        REQUIRE(finite_diff_check(f, {&mu, &raw_var, &mu_p, &raw_var_p}, 1e-5) < 1e-4);
    }
    SECTION("fixed-var gaussian log_prob") {
        auto f = [&](Tape<double>& t) {
            FixedVarGaussianParams<double> dist{t.leaf(mu)};
            return t.mean_all(log_prob(dist, t.constant({b, d}, value_data)));
        };
        REQUIRE(finite_diff_check(f, {&mu}, 1e-5) < 1e-4);
    }
}
