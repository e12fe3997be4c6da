#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "jmvl/adam.hpp"
#include "jmvl/checkpoint.hpp"
#include "jmvl/config.hpp"
#include "jmvl/data.hpp"
#include "jmvl/models.hpp"
#include "jmvl/rng.hpp"

namespace jmvl {

/// Linear KL warm-up: beta ramps over the first N_t epochs, then saturates.
inline double warmup_weight(std::size_t epoch, std::size_t n_t) {
    return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(n_t));
}

struct EpochRow {
    std::size_t epoch = 0;
    double beta = 0, loss = 0, recon_x = 0, recon_w = 0;
    double kl_prior = 0, kl_match_x = 0, kl_match_w = 0, kl_layer1 = 0;
    double wall_s = 0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,beta,loss,recon_x,recon_w,kl_prior,kl_match_x,kl_match_w,kl_layer1,wall_s";

inline std::string metrics_row_csv(const EpochRow& r) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f", r.epoch, r.beta,
                  r.loss, r.recon_x, r.recon_w, r.kl_prior, r.kl_match_x, r.kl_match_w, r.kl_layer1,
                  r.wall_s);
    return buf;
}

inline std::pair<ModalitySpec, ModalitySpec> modality_specs(const TrainConfig& cfg,
                                                            const BimodalDataset& ds) {
    ModalitySpec mx{ds.x_is_image ? ModalityKind::bernoulli : ModalityKind::fixed_var_gaussian,
                    ds.x_dim};
    ModalitySpec mw{ModalityKind::categorical, ds.w_dim};
    (void)cfg;
    return {mx, mw};
}

inline Model<float> model_from_config(const TrainConfig& cfg, const BimodalDataset& ds) {
    auto [mx, mw] = modality_specs(cfg, ds);
    return build_model<float>(cfg.model, mx, mw, cfg.latent_dim, cfg.latent_dim2, cfg.archs,
                              cfg.cvae_direction == "x_given_w", cfg.seed);
}

/// Train/test pair per the config's dataset id. The MNIST-style split keeps
/// the leading 50,000 of the training file; the test file is used as-is.
struct DatasetPair {
    BimodalDataset train, test;
};

inline BimodalDataset dataset_slice(const BimodalDataset& ds, std::size_t start, std::size_t count) {
    BimodalDataset out = ds;
    out.n = count;
    out.x.assign(ds.x.begin() + start * ds.x_dim, ds.x.begin() + (start + count) * ds.x_dim);
    out.w.assign(ds.w.begin() + start * ds.w_dim, ds.w.begin() + (start + count) * ds.w_dim);
    out.labels.assign(ds.labels.begin() + start, ds.labels.begin() + start + count);
    return out;
}

inline DatasetPair load_datasets(const TrainConfig& cfg) {
    DatasetPair pair;
    if (cfg.dataset == "toy") {
        ToySpec spec{cfg.toy_clusters, cfg.toy_x_dim, cfg.toy_items + cfg.toy_test_items, cfg.toy_seed};
        BimodalDataset all = make_toy(spec);
        pair.train = dataset_slice(all, 0, cfg.toy_items);
        pair.test = dataset_slice(all, cfg.toy_items, cfg.toy_test_items);
        return pair;
    }
    if (cfg.mnist_images.empty() || cfg.mnist_labels.empty())
        throw ConfigError("dataset = mnist needs mnist_images and mnist_labels paths");
    BimodalDataset train_file = load_mnist(cfg.mnist_images, cfg.mnist_labels);
    std::size_t train_take = std::min<std::size_t>(train_file.n, 50000);
    if (cfg.train_items > 0) train_take = std::min(train_take, cfg.train_items);
    pair.train = dataset_head(train_file, train_take);
    if (!cfg.mnist_test_images.empty()) {
        pair.test = load_mnist(cfg.mnist_test_images, cfg.mnist_test_labels);
        if (cfg.test_items > 0) pair.test = dataset_head(pair.test, cfg.test_items);
    }
    return pair;
}

/// One item's model input row: dynamic binarization for image modalities,
/// seeded by (run seed, epoch, global item index) so the draw is independent
/// of batch order and parallel schedule.
inline void fill_x_row(const BimodalDataset& ds, std::size_t item, std::uint64_t seed,
                       std::size_t epoch, float* out) {
    const float* src = ds.x.data() + item * ds.x_dim;
    if (!ds.x_is_image) {
        std::copy_n(src, ds.x_dim, out);
        return;
    }
    Rng rng(derive_seed(seed, {kTagBinarize, epoch, item}));
    for (std::size_t j = 0; j < ds.x_dim; ++j) {
        float g = src[j];
        if (g < 0.0f || g > 1.0f) throw RangeError("binarize: gray value outside [0,1]");
        out[j] = rng.uniform() < static_cast<double>(g) ? 1.0f : 0.0f;
    }
}

template <typename T = float>
struct TrainResult {
    Model<T> model;
    AdamState<T> adam;
    std::vector<EpochRow> metrics;
};

/// Full training loop per the config. When out_dir is nonempty, appends
/// metrics.csv incrementally and keeps the newest completed-epoch checkpoint
/// at out_dir/model.ckpt.
inline TrainResult<float> train_model(const TrainConfig& cfg, const BimodalDataset& train_ds,
                                      const std::string& out_dir = "") {
    if (train_ds.n == 0) throw ConfigError("training dataset is empty");
    TrainResult<float> result{model_from_config(cfg, train_ds), {}, {}};
    Model<float>& model = result.model;
    AdamState<float>& adam = result.adam;
    BoundOptions opt;
    opt.kl_extra_coeff = cfg.kl_extra_coeff;
    opt.warmup_scales_extra = cfg.warmup_scope == "all";

    std::ofstream metrics_out;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics_out.open(out_dir + "/metrics.csv", std::ios::trunc);
        if (!metrics_out) throw IoError("cannot write metrics.csv in " + out_dir);
        metrics_out << kMetricsHeader << "\n";
        metrics_out.flush();
    }

    std::vector<Parameter<float>*> params = model.parameters();
    const std::size_t n = train_ds.n;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        const float beta = static_cast<float>(warmup_weight(epoch, cfg.warmup_epochs));
        Rng shuffle_rng(derive_seed(cfg.seed, {kTagShuffle, epoch}));
        std::vector<std::size_t> perm = permutation(n, shuffle_rng);

        EpochRow row;
        row.epoch = epoch;
        row.beta = beta;
        std::size_t step = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
            const std::size_t bn = std::min(cfg.batch_size, n - start);
            Minibatch<float> batch;
            batch.n = bn;
            batch.x.resize(bn * train_ds.x_dim);
            batch.w.resize(bn * train_ds.w_dim);
            for (std::size_t i = 0; i < bn; ++i) {
                const std::size_t item = perm[start + i];
                fill_x_row(train_ds, item, cfg.seed, epoch, batch.x.data() + i * train_ds.x_dim);
                std::copy_n(train_ds.w.data() + item * train_ds.w_dim, train_ds.w_dim,
                            batch.w.data() + i * train_ds.w_dim);
            }
            Rng noise_rng(derive_seed(cfg.seed, {kTagNoise, epoch, step}));
            Noise<float> noise = make_noise(model, bn, cfg.mc_samples, noise_rng);

            Tape<float> tape;
            BoundResult<float> r = elbo(tape, model, batch, beta, noise, opt);
            GradMap<float> grads = tape.backward(r.loss);
            adam_step(params, grads, adam, static_cast<float>(cfg.lr));

            const double wgt = static_cast<double>(bn) / static_cast<double>(n);
            auto term = [&r](const char* k) {
                auto it = r.terms.find(k);
                return it == r.terms.end() ? 0.0 : it->second;
            };
            row.loss += wgt * term("loss");
            row.recon_x += wgt * term("recon_x");
            row.recon_w += wgt * term("recon_w");
            row.kl_prior += wgt * term("kl_prior");
            row.kl_match_x += wgt * term("kl_match_x");
            row.kl_match_w += wgt * term("kl_match_w");
            row.kl_layer1 += wgt * term("kl_layer1");
        }
        row.wall_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.metrics.push_back(row);
        if (!out_dir.empty()) {
            metrics_out << metrics_row_csv(row) << "\n";
            metrics_out.flush();
            save_checkpoint(out_dir + "/model.ckpt", model, adam, epoch, cfg.echo);
        }
    }
    return result;
}

}  // namespace jmvl
