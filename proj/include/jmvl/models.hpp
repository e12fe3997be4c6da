#pragma once

#include <map>
#include <string>
#include <vector>

#include "jmvl/common.hpp"
#include "jmvl/dists.hpp"
#include "jmvl/net.hpp"
#include "jmvl/rng.hpp"
#include "jmvl/tensor.hpp"

namespace jmvl {

enum class ModelKind { vae, jmvae, jmvae_kl, jmvae_h, cvae };

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::vae: return "vae";
        case ModelKind::jmvae: return "jmvae";
        case ModelKind::jmvae_kl: return "jmvae_kl";
        case ModelKind::jmvae_h: return "jmvae_h";
        case ModelKind::cvae: return "cvae";
    }
    return "?";
}

inline ModelKind model_kind_from(const std::string& s) {
    if (s == "vae") return ModelKind::vae;
    if (s == "jmvae") return ModelKind::jmvae;
    if (s == "jmvae_kl") return ModelKind::jmvae_kl;
    if (s == "jmvae_h") return ModelKind::jmvae_h;
    if (s == "cvae") return ModelKind::cvae;
    throw ConfigError("unknown model kind '" + s + "'");
}

enum class ModalityKind { bernoulli, categorical, fixed_var_gaussian };

struct ModalitySpec {
    ModalityKind kind = ModalityKind::bernoulli;
    std::size_t dim = 0;
};

inline HeadKind head_for(ModalityKind k) {
    switch (k) {
        case ModalityKind::bernoulli: return HeadKind::bernoulli;
        case ModalityKind::categorical: return HeadKind::categorical;
        case ModalityKind::fixed_var_gaussian: return HeadKind::fixed_var_gaussian;
    }
    return HeadKind::bernoulli;
}

/// Architecture strings per network role, in the canonical notation.
struct ModelArchs {
    std::string enc_joint = "(D512R-D512R, D512R-D512R)";
    std::string enc_x = "D512R-D512R";
    std::string enc_w = "D512R-D512R";
    std::string dec_x = "D512R-D512R";
    std::string dec_w = "D512R-D512R";
    std::string h2_tail = "D64-D512R-D512R";  // deterministic path h1 -> h2
    std::string prior_z1 = "D512R-D512R";     // p(z1|z2) trunk
};

/// One of the five variants: a bag of named networks plus enough metadata to
/// evaluate its bound and run inference.
template <typename T>
struct Model {
    ModelKind kind = ModelKind::jmvae;
    ModalitySpec mx, mw;
    std::size_t z_dim = 0;
    std::size_t z2_dim = 0;       // jmvae_h only
    bool cvae_x_given_w = true;   // cvae only: target x conditioned on w
    ModelArchs archs;
    std::map<std::string, Network<T>> nets;

    Network<T>& net(const std::string& name) {
        auto it = nets.find(name);
        if (it == nets.end()) throw Error("model has no network '" + name + "'");
        return it->second;
    }
    const Network<T>& net(const std::string& name) const {
        auto it = nets.find(name);
        if (it == nets.end()) throw Error("model has no network '" + name + "'");
        return it->second;
    }
    bool has_net(const std::string& name) const { return nets.count(name) != 0; }

    /// Deterministic iteration order: map order, then per-network order.
    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out;
        for (auto& [name, n] : nets) {
            auto ps = n.parameters();
            out.insert(out.end(), ps.begin(), ps.end());
        }
        return out;
    }
};

namespace detail {

inline std::uint64_t name_tag(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace detail

template <typename T>
Model<T> build_model(ModelKind kind, ModalitySpec mx, ModalitySpec mw, std::size_t z_dim,
                     std::size_t z2_dim, const ModelArchs& archs, bool cvae_x_given_w,
                     std::uint64_t seed) {
    if (z_dim == 0) throw ConfigError("latent dimension must be positive");
    Model<T> m;
    m.kind = kind;
    m.mx = mx;
    m.mw = mw;
    m.z_dim = z_dim;
    m.z2_dim = z2_dim == 0 ? z_dim : z2_dim;
    m.cvae_x_given_w = cvae_x_given_w;
    m.archs = archs;

    auto add = [&](const std::string& name, const std::string& arch,
                   std::vector<std::size_t> input_dims, HeadKind head, std::size_t head_dim) {
        Rng rng(derive_seed(seed, {0x6e65, detail::name_tag(name)}));
        m.nets.emplace(name, Network<T>::build(name, parse_arch(arch), input_dims, head, head_dim, rng));
    };

    switch (kind) {
        case ModelKind::vae:
            add("enc", archs.enc_x, {mx.dim}, HeadKind::diag_gaussian, z_dim);
            add("dec_x", archs.dec_x, {z_dim}, head_for(mx.kind), mx.dim);
            break;
        case ModelKind::jmvae:
            add("q_joint", archs.enc_joint, {mx.dim, mw.dim}, HeadKind::diag_gaussian, z_dim);
            add("dec_x", archs.dec_x, {z_dim}, head_for(mx.kind), mx.dim);
            add("dec_w", archs.dec_w, {z_dim}, head_for(mw.kind), mw.dim);
            break;
        case ModelKind::jmvae_kl:
            add("q_joint", archs.enc_joint, {mx.dim, mw.dim}, HeadKind::diag_gaussian, z_dim);
            add("q_x", archs.enc_x, {mx.dim}, HeadKind::diag_gaussian, z_dim);
            add("q_w", archs.enc_w, {mw.dim}, HeadKind::diag_gaussian, z_dim);
            add("dec_x", archs.dec_x, {z_dim}, head_for(mx.kind), mx.dim);
            add("dec_w", archs.dec_w, {z_dim}, head_for(mw.kind), mw.dim);
            break;
        case ModelKind::jmvae_h: {
            add("q_z1", archs.enc_joint, {mx.dim, mw.dim}, HeadKind::diag_gaussian, z_dim);
            std::size_t h1_dim = m.net("q_z1").trunk_dim();
            add("q_z2", archs.h2_tail, {h1_dim}, HeadKind::diag_gaussian, m.z2_dim);
            add("p_z1_z2", archs.prior_z1, {m.z2_dim}, HeadKind::diag_gaussian, z_dim);
            add("dec_x", archs.dec_x, {z_dim}, head_for(mx.kind), mx.dim);
            add("dec_w", archs.dec_w, {z_dim}, head_for(mw.kind), mw.dim);
            break;
        }
        case ModelKind::cvae: {
            ModalitySpec target = cvae_x_given_w ? mx : mw;
            ModalitySpec cond = cvae_x_given_w ? mw : mx;
            add("enc", archs.enc_joint, {target.dim, cond.dim}, HeadKind::diag_gaussian, z_dim);
            add("dec", cvae_x_given_w ? archs.dec_x : archs.dec_w, {z_dim + cond.dim},
                head_for(target.kind), target.dim);
            break;
        }
    }
    return m;
}

/// Per-step reparameterization noise: one [n * dim] draw per MC sample.
template <typename T>
struct Noise {
    std::vector<std::vector<T>> eps_z;
    std::vector<std::vector<T>> eps_z2;  // jmvae_h only
};

template <typename T>
Noise<T> make_noise(const Model<T>& m, std::size_t n, std::size_t mc_samples, Rng& rng) {
    Noise<T> noise;
    for (std::size_t s = 0; s < mc_samples; ++s) {
        std::vector<T> e(n * m.z_dim);
        rng.fill_normal(e);
        noise.eps_z.push_back(std::move(e));
        if (m.kind == ModelKind::jmvae_h) {
            std::vector<T> e2(n * m.z2_dim);
            rng.fill_normal(e2);
            noise.eps_z2.push_back(std::move(e2));
        }
    }
    return noise;
}

/// Raw batch rows; bounds lift them onto the tape as constants.
template <typename T>
struct Minibatch {
    std::size_t n = 0;
    std::vector<T> x;  // [n, x_dim]
    std::vector<T> w;  // [n, w_dim]
};

struct BoundOptions {
    double kl_extra_coeff = 1.0;      // weight on the Eq-4 style encoder-matching KLs
    bool warmup_scales_extra = true;  // if false, warm-up touches the prior KL only
};

/// Scalar training loss plus the batch-mean value of every term.
/// loss = recon terms + beta-weighted divergence terms, all per-example means.
template <typename T>
struct BoundResult {
    Tensor<T> loss;
    std::map<std::string, double> terms;
};

namespace detail {

template <typename T>
Tensor<T> decoder_log_prob(Tape<T>& tape, const Network<T>& dec, const Tensor<T>& code,
                           const Tensor<T>& value) {
    NetworkOutput<T> out = dec.forward(tape, code);
    switch (dec.head()) {
        case HeadKind::bernoulli: return log_prob(out.bernoulli(), value);
        case HeadKind::categorical: return log_prob(out.categorical(), value);
        case HeadKind::fixed_var_gaussian: return log_prob(out.fixed_var_gaussian(), value);
        case HeadKind::diag_gaussian: return log_prob(out.gaussian(), value);
    }
    throw Error("unreachable");
}

template <typename T>
Tensor<T> average_samples(Tape<T>& tape, const std::vector<Tensor<T>>& per_sample) {
    Tensor<T> acc = per_sample[0];
    for (std::size_t s = 1; s < per_sample.size(); ++s) acc = tape.add(acc, per_sample[s]);
    if (per_sample.size() > 1) acc = tape.scale(acc, T(1) / static_cast<T>(per_sample.size()));
    return acc;
}

template <typename T>
double mean_value(Tape<T>& tape, const Tensor<T>& per_example) {
    return static_cast<double>(tape.mean_all(per_example).scalar_value());
}

}  // namespace detail

template <typename T>
BoundResult<T> elbo_vae(Tape<T>& tape, Model<T>& m, const Minibatch<T>& batch, T beta,
                        const Noise<T>& noise) {
    if (m.kind != ModelKind::vae) throw UnsupportedOperation("elbo_vae needs a vae model");
    if (beta < T(0) || beta > T(1)) throw ConfigError("beta must lie in [0,1]");
    Tensor<T> x = tape.constant({batch.n, m.mx.dim}, batch.x);
    NetworkOutput<T> enc = m.net("enc").forward(tape, x);
    DiagGaussianParams<T> q = enc.gaussian();

    std::vector<Tensor<T>> recon;
    for (const auto& eps_data : noise.eps_z) {
        Tensor<T> eps = tape.constant({batch.n, m.z_dim}, eps_data);
        Tensor<T> z = rsample(q, eps);
        recon.push_back(detail::decoder_log_prob(tape, m.net("dec_x"), z, x));
    }
    Tensor<T> neg_recon = tape.scale(detail::average_samples(tape, recon), T(-1));
    Tensor<T> kl = kl_to_std_normal(q);

    BoundResult<T> r;
    r.loss = tape.mean_all(tape.add(neg_recon, tape.scale(kl, beta)));
    r.terms["recon_x"] = detail::mean_value(tape, neg_recon);
    r.terms["kl_prior"] = detail::mean_value(tape, kl);
    r.terms["loss"] = static_cast<double>(r.loss.scalar_value());
    return r;
}

namespace detail {

// Shared by jmvae and jmvae_kl: joint posterior, both reconstructions, prior KL.
template <typename T>
struct JointParts {
    DiagGaussianParams<T> q;
    Tensor<T> neg_recon_x, neg_recon_w, kl_prior;
    Tensor<T> x, w;
};

template <typename T>
JointParts<T> joint_parts(Tape<T>& tape, Model<T>& m, const Minibatch<T>& batch,
                          const Noise<T>& noise) {
    JointParts<T> p;
    p.x = tape.constant({batch.n, m.mx.dim}, batch.x);
    p.w = tape.constant({batch.n, m.mw.dim}, batch.w);
    NetworkOutput<T> enc = m.net("q_joint").forward(tape, p.x, &p.w);
    p.q = enc.gaussian();

    std::vector<Tensor<T>> rx, rw;
    for (const auto& eps_data : noise.eps_z) {
        Tensor<T> eps = tape.constant({batch.n, m.z_dim}, eps_data);
        Tensor<T> z = rsample(p.q, eps);
        rx.push_back(decoder_log_prob(tape, m.net("dec_x"), z, p.x));
        rw.push_back(decoder_log_prob(tape, m.net("dec_w"), z, p.w));
    }
    p.neg_recon_x = tape.scale(average_samples(tape, rx), T(-1));
    p.neg_recon_w = tape.scale(average_samples(tape, rw), T(-1));
    p.kl_prior = kl_to_std_normal(p.q);
    return p;
}

}  // namespace detail

template <typename T>
BoundResult<T> elbo_jmvae(Tape<T>& tape, Model<T>& m, const Minibatch<T>& batch, T beta,
                          const Noise<T>& noise) {
    if (m.kind != ModelKind::jmvae && m.kind != ModelKind::jmvae_kl)
        throw UnsupportedOperation("elbo_jmvae needs a jmvae or jmvae_kl model");
    if (beta < T(0) || beta > T(1)) throw ConfigError("beta must lie in [0,1]");
    auto p = detail::joint_parts(tape, m, batch, noise);
    Tensor<T> recon = tape.add(p.neg_recon_x, p.neg_recon_w);

    BoundResult<T> r;
    r.loss = tape.mean_all(tape.add(recon, tape.scale(p.kl_prior, beta)));
    r.terms["recon_x"] = detail::mean_value(tape, p.neg_recon_x);
    r.terms["recon_w"] = detail::mean_value(tape, p.neg_recon_w);
    r.terms["kl_prior"] = detail::mean_value(tape, p.kl_prior);
    r.terms["loss"] = static_cast<double>(r.loss.scalar_value());
    return r;
}

template <typename T>
BoundResult<T> elbo_jmvae_kl(Tape<T>& tape, Model<T>& m, const Minibatch<T>& batch, T beta,
                             const Noise<T>& noise, const BoundOptions& opt = {}) {
    if (m.kind != ModelKind::jmvae_kl) throw UnsupportedOperation("elbo_jmvae_kl needs a jmvae_kl model");
    if (beta < T(0) || beta > T(1)) throw ConfigError("beta must lie in [0,1]");
    auto p = detail::joint_parts(tape, m, batch, noise);
    NetworkOutput<T> ex = m.net("q_x").forward(tape, p.x);
    NetworkOutput<T> ew = m.net("q_w").forward(tape, p.w);
    Tensor<T> kl_x = kl_diag_gaussians(p.q, ex.gaussian());
    Tensor<T> kl_w = kl_diag_gaussians(p.q, ew.gaussian());

    Tensor<T> recon = tape.add(p.neg_recon_x, p.neg_recon_w);
    T extra_w = static_cast<T>(opt.kl_extra_coeff) * (opt.warmup_scales_extra ? beta : T(1));
    Tensor<T> divergences =
        tape.add(tape.scale(p.kl_prior, beta), tape.scale(tape.add(kl_x, kl_w), extra_w));

    BoundResult<T> r;
    r.loss = tape.mean_all(tape.add(recon, divergences));
    r.terms["recon_x"] = detail::mean_value(tape, p.neg_recon_x);
    r.terms["recon_w"] = detail::mean_value(tape, p.neg_recon_w);
    r.terms["kl_prior"] = detail::mean_value(tape, p.kl_prior);
    r.terms["kl_match_x"] = detail::mean_value(tape, kl_x);
    r.terms["kl_match_w"] = detail::mean_value(tape, kl_w);
    r.terms["loss"] = static_cast<double>(r.loss.scalar_value());
    return r;
}

template <typename T>
BoundResult<T> elbo_jmvae_h(Tape<T>& tape, Model<T>& m, const Minibatch<T>& batch, T beta,
                            const Noise<T>& noise) {
    if (m.kind != ModelKind::jmvae_h) throw UnsupportedOperation("elbo_jmvae_h needs a jmvae_h model");
    if (beta < T(0) || beta > T(1)) throw ConfigError("beta must lie in [0,1]");
    if (noise.eps_z2.size() != noise.eps_z.size())
        throw ShapeError("elbo_jmvae_h needs a z2 noise draw per sample");
    Tensor<T> x = tape.constant({batch.n, m.mx.dim}, batch.x);
    Tensor<T> w = tape.constant({batch.n, m.mw.dim}, batch.w);

    NetworkOutput<T> e1 = m.net("q_z1").forward(tape, x, &w);
    DiagGaussianParams<T> q1 = e1.gaussian();
    NetworkOutput<T> e2 = m.net("q_z2").forward(tape, e1.trunk);
    DiagGaussianParams<T> q2 = e2.gaussian();

    std::vector<Tensor<T>> rx, rw, kl1s;
    for (std::size_t s = 0; s < noise.eps_z.size(); ++s) {
        Tensor<T> eps2 = tape.constant({batch.n, m.z2_dim}, noise.eps_z2[s]);
        Tensor<T> z2 = rsample(q2, eps2);
        NetworkOutput<T> prior = m.net("p_z1_z2").forward(tape, z2);
        kl1s.push_back(kl_diag_gaussians(q1, prior.gaussian()));

        Tensor<T> eps1 = tape.constant({batch.n, m.z_dim}, noise.eps_z[s]);
        Tensor<T> z1 = rsample(q1, eps1);
        rx.push_back(detail::decoder_log_prob(tape, m.net("dec_x"), z1, x));
        rw.push_back(detail::decoder_log_prob(tape, m.net("dec_w"), z1, w));
    }
    Tensor<T> neg_recon_x = tape.scale(detail::average_samples(tape, rx), T(-1));
    Tensor<T> neg_recon_w = tape.scale(detail::average_samples(tape, rw), T(-1));
    Tensor<T> kl_layer1 = detail::average_samples(tape, kl1s);
    Tensor<T> kl_top = kl_to_std_normal(q2);

    BoundResult<T> r;
    Tensor<T> recon = tape.add(neg_recon_x, neg_recon_w);
    Tensor<T> divergences = tape.scale(tape.add(kl_layer1, kl_top), beta);
    r.loss = tape.mean_all(tape.add(recon, divergences));
    r.terms["recon_x"] = detail::mean_value(tape, neg_recon_x);
    r.terms["recon_w"] = detail::mean_value(tape, neg_recon_w);
    r.terms["kl_layer1"] = detail::mean_value(tape, kl_layer1);
    r.terms["kl_prior"] = detail::mean_value(tape, kl_top);
    r.terms["loss"] = static_cast<double>(r.loss.scalar_value());
    return r;
}

template <typename T>
BoundResult<T> elbo_cvae(Tape<T>& tape, Model<T>& m, const Minibatch<T>& batch, T beta,
                         const Noise<T>& noise) {
    if (m.kind != ModelKind::cvae) throw UnsupportedOperation("elbo_cvae needs a cvae model");
    if (beta < T(0) || beta > T(1)) throw ConfigError("beta must lie in [0,1]");
    const ModalitySpec target = m.cvae_x_given_w ? m.mx : m.mw;
    const ModalitySpec cond = m.cvae_x_given_w ? m.mw : m.mx;
    Tensor<T> t_val = tape.constant({batch.n, target.dim}, m.cvae_x_given_w ? batch.x : batch.w);
    Tensor<T> c_val = tape.constant({batch.n, cond.dim}, m.cvae_x_given_w ? batch.w : batch.x);

    NetworkOutput<T> enc = m.net("enc").forward(tape, t_val, &c_val);
    DiagGaussianParams<T> q = enc.gaussian();

    std::vector<Tensor<T>> recon;
    for (const auto& eps_data : noise.eps_z) {
        Tensor<T> eps = tape.constant({batch.n, m.z_dim}, eps_data);
        Tensor<T> z = rsample(q, eps);
        Tensor<T> code = tape.concat_cols(z, c_val);
        recon.push_back(detail::decoder_log_prob(tape, m.net("dec"), code, t_val));
    }
    Tensor<T> neg_recon = tape.scale(detail::average_samples(tape, recon), T(-1));
    Tensor<T> kl = kl_to_std_normal(q);

    BoundResult<T> r;
    r.loss = tape.mean_all(tape.add(neg_recon, tape.scale(kl, beta)));
    r.terms[m.cvae_x_given_w ? "recon_x" : "recon_w"] = detail::mean_value(tape, neg_recon);
    r.terms["kl_prior"] = detail::mean_value(tape, kl);
    r.terms["loss"] = static_cast<double>(r.loss.scalar_value());
    return r;
}

/// Bound dispatch on the model kind.
template <typename T>
BoundResult<T> elbo(Tape<T>& tape, Model<T>& m, const Minibatch<T>& batch, T beta,
                    const Noise<T>& noise, const BoundOptions& opt = {}) {
    switch (m.kind) {
        case ModelKind::vae: return elbo_vae(tape, m, batch, beta, noise);
        case ModelKind::jmvae: return elbo_jmvae(tape, m, batch, beta, noise);
        case ModelKind::jmvae_kl: return elbo_jmvae_kl(tape, m, batch, beta, noise, opt);
        case ModelKind::jmvae_h: return elbo_jmvae_h(tape, m, batch, beta, noise);
        case ModelKind::cvae: return elbo_cvae(tape, m, batch, beta, noise);
    }
    throw Error("unreachable");
}

}  // namespace jmvl
