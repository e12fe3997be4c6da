// jmvl command-line interface: train / eval / generate / complement / latent /
// shift / selftest over config files, emitting CSV metrics, checkpoints and
// PGM image grids. Exit codes: 0 ok, 1 config/usage, 2 numerics, 3 I/O.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "jmvl/jmvl.hpp"

namespace fs = std::filesystem;
using namespace jmvl;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    std::string checkpoint;
    std::int64_t seed_override = -1;
};

std::string iso_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::map<std::string, std::string> parse_overrides(const CommonArgs& args) {
    std::map<std::string, std::string> kv;
    for (const std::string& ov : args.overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects KEY=VALUE, got '" + ov + "'");
        kv[ov.substr(0, eq)] = ov.substr(eq + 1);
    }
    if (args.seed_override >= 0) kv["seed"] = std::to_string(args.seed_override);
    return kv;
}

TrainConfig load_run_config(const CommonArgs& args) {
    if (args.config_path.empty()) throw ConfigError("--config is required");
    std::ifstream probe(args.config_path);
    if (!probe) throw IoError("cannot open config " + args.config_path);
    char first = 0;
    probe >> first;
    auto overrides = parse_overrides(args);
    if (first == '{') {
        // a manifest: rerun from its embedded config echo
        std::ifstream in(args.config_path);
        nlohmann::json manifest = nlohmann::json::parse(in);
        auto kv = manifest.at("config").get<std::map<std::string, std::string>>();
        for (const auto& [k, v] : overrides) kv[k] = v;
        return config_from_map(std::move(kv));
    }
    return load_config(args.config_path, overrides);
}

struct RunManifest {
    std::string verb;
    std::string started = iso_now();
    std::vector<std::string> artifacts;

    void note(const std::string& name) { artifacts.push_back(name); }
    void write(const fs::path& dir, const TrainConfig& cfg) const {
        nlohmann::json j;
        j["tool"] = "jmvl";
        j["version"] = kVersion;
        j["verb"] = verb;
        j["seed"] = cfg.seed;
        j["config"] = cfg.echo;
        j["artifacts"] = artifacts;
        j["started_at"] = started;
        j["finished_at"] = iso_now();
        std::ofstream out(dir / "manifest.json");
        if (!out) throw IoError("cannot write manifest.json");
        out << j.dump(2) << "\n";
    }
};

// Base config comes from the checkpoint's echo; an optional --config file and
// --set pairs overlay it (dataset paths, eval knobs).
std::pair<Model<float>, TrainConfig> load_model_for(const CommonArgs& args) {
    if (args.checkpoint.empty()) throw ConfigError("--checkpoint is required for this command");
    Checkpoint ckpt = load_checkpoint(args.checkpoint);
    auto kv = ckpt.config;
    if (!args.config_path.empty()) {
        TrainConfig file_cfg = load_run_config(CommonArgs{args.config_path, {}, args.out_dir});
        for (const auto& [k, v] : file_cfg.echo) kv[k] = v;
    }
    for (const auto& [k, v] : parse_overrides(args)) kv[k] = v;
    TrainConfig cfg = config_from_map(kv);
    auto [model, adam] = model_from_checkpoint(ckpt);
    (void)adam;
    return {std::move(model), std::move(cfg)};
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// ---- verbs ----------------------------------------------------------------

int run_train(const CommonArgs& args) {
    TrainConfig cfg = load_run_config(args);
    fs::create_directories(args.out_dir);
    RunManifest manifest{"train"};
    DatasetPair data = load_datasets(cfg);
    std::cerr << "training " << model_kind_name(cfg.model) << " on " << data.train.n
              << " items for " << cfg.epochs << " epochs\n";
    train_model(cfg, data.train, args.out_dir);
    manifest.note("model.ckpt");
    manifest.note("metrics.csv");
    manifest.write(args.out_dir, cfg);
    return 0;
}

int run_eval(const CommonArgs& args) {
    auto [model, cfg] = load_model_for(args);
    fs::create_directories(args.out_dir);
    RunManifest manifest{"eval"};
    DatasetPair data = load_datasets(cfg);
    if (data.test.n == 0) throw ConfigError("eval needs a test split (mnist_test_* or toy)");
    Direction dir = cfg.eval_direction == "x_given_w" ? Direction::x_given_w : Direction::w_given_x;
    CllOptions opt;
    opt.n_samples = cfg.eval_n;
    opt.chain_iterations = cfg.eval_t;
    opt.init = cfg.complement_init == "prior" ? ComplementInit::prior : ComplementInit::zeros;
    opt.max_items = cfg.eval_items;
    CllEstimate e = cond_loglik(model, data.test, dir, cfg.seed, opt);
    std::ofstream out(fs::path(args.out_dir) / "cll.csv");
    if (!out) throw IoError("cannot write cll.csv");
    out << "model,direction,n,t,estimate,std_error,items\n";
    out << model_kind_name(model.kind) << "," << direction_name(dir) << "," << e.n << ","
        << cfg.eval_t << "," << fmt(e.value) << "," << fmt(e.std_error) << "," << e.items << "\n";
    manifest.note("cll.csv");
    manifest.write(args.out_dir, cfg);
    std::cerr << "conditional log-likelihood " << fmt(e.value) << " +- " << fmt(e.std_error)
              << " nats over " << e.items << " items\n";
    return 0;
}

int run_generate(const CommonArgs& args) {
    auto [model, cfg] = load_model_for(args);
    if (model.mx.kind != ModalityKind::bernoulli)
        throw ConfigError("generate renders image modalities only");
    fs::create_directories(args.out_dir);
    RunManifest manifest{"generate"};
    const std::size_t classes = model.mw.dim;
    const std::size_t cols = cfg.gen_per_class;
    const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(double(model.mx.dim))));
    std::vector<std::vector<float>> cells(classes * cols);

    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<float> w_row(classes, 0.0f);
        w_row[c] = 1.0f;
        for (std::size_t s = 0; s < cols; ++s) {
            Rng rng(derive_seed(cfg.seed, {kTagEval, c * cols + s}));
            std::vector<float> code(model.z_dim);
            if (model.kind == ModelKind::jmvae_kl) {
                std::vector<float> mu, var;
                detail::encode_block(model.net("q_w"), w_row, 1, classes, mu, var);
                for (std::size_t j = 0; j < model.z_dim; ++j)
                    code[j] = mu[j] + std::sqrt(var[j]) * static_cast<float>(rng.normal());
            } else if (model.kind == ModelKind::jmvae || model.kind == ModelKind::jmvae_h) {
                std::vector<Rng> rngs{rng};
                auto fin = detail::run_chain_block(
                    model, w_row, 1, MissingModality::x, cfg.eval_t,
                    cfg.complement_init == "prior" ? ComplementInit::prior : ComplementInit::zeros,
                    rngs);
                cells[c * cols + s] = fin.last_decoder_mean;
                continue;
            } else if (model.kind == ModelKind::cvae && model.cvae_x_given_w) {
                for (auto& v : code) v = static_cast<float>(rng.normal());
                code.insert(code.end(), w_row.begin(), w_row.end());
                Tape<float> t;
                cells[c * cols + s] =
                    model.net("dec").forward(t, t.constant({1, code.size()}, code)).mean.values();
                continue;
            } else if (model.kind == ModelKind::vae) {
                for (auto& v : code) v = static_cast<float>(rng.normal());
            } else {
                throw UnsupportedOperation("generate does not support this model/direction");
            }
            Tape<float> t;
            cells[c * cols + s] =
                model.net("dec_x").forward(t, t.constant({1, model.z_dim}, code)).mean.values();
        }
    }
    write_pgm_grid((fs::path(args.out_dir) / "generate.pgm").string(), cells, classes, cols, side,
                   side);
    manifest.note("generate.pgm");
    manifest.write(args.out_dir, cfg);
    return 0;
}

int run_complement(const CommonArgs& args) {
    auto [model, cfg] = load_model_for(args);
    if (model.mx.kind != ModalityKind::bernoulli)
        throw ConfigError("complement frames render image modalities only");
    fs::create_directories(args.out_dir);
    RunManifest manifest{"complement"};
    const std::size_t classes = model.mw.dim;
    const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(double(model.mx.dim))));
    const std::size_t T = cfg.eval_t;
    ComplementInit init =
        cfg.complement_init == "prior" ? ComplementInit::prior : ComplementInit::zeros;

    std::vector<ComplementTrajectory<float>> trajs;
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<float> w_row(classes, 0.0f);
        w_row[c] = 1.0f;
        trajs.push_back(
            complement(model, w_row, MissingModality::x, T, init, derive_seed(cfg.seed, {kTagEval, c})));
    }
    char name[64];
    for (std::size_t step = 0; step <= T; ++step) {
        std::vector<std::vector<float>> cells;
        for (std::size_t c = 0; c < classes; ++c) cells.push_back(trajs[c].estimates[step]);
        std::snprintf(name, sizeof name, "frame_%03zu.pgm", step);
        write_pgm_grid((fs::path(args.out_dir) / name).string(), cells, 1, classes, side, side);
        manifest.note(name);
    }
    {
        std::vector<std::vector<float>> cells;
        for (std::size_t c = 0; c < classes; ++c) cells.push_back(trajs[c].final_decoder_mean);
        write_pgm_grid((fs::path(args.out_dir) / "frame_mean.pgm").string(), cells, 1, classes,
                       side, side);
        manifest.note("frame_mean.pgm");
    }
    manifest.write(args.out_dir, cfg);
    return 0;
}

int run_latent(const CommonArgs& args) {
    auto [model, cfg] = load_model_for(args);
    fs::create_directories(args.out_dir);
    RunManifest manifest{"latent"};
    DatasetPair data = load_datasets(cfg);
    if (data.test.n == 0) throw ConfigError("latent export needs a test split");
    const std::size_t n = cfg.eval_items > 0 ? std::min(cfg.eval_items, data.test.n) : data.test.n;
    BimodalDataset test = dataset_head(data.test, n);

    // binarize image inputs the same way evaluation does
    std::vector<float> x_rows(n * test.x_dim);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(cfg.seed, {kTagEvalBin, i}));
        for (std::size_t j = 0; j < test.x_dim; ++j) {
            float g = test.x[i * test.x_dim + j];
            x_rows[i * test.x_dim + j] =
                test.x_is_image ? (rng.uniform() < double(g) ? 1.0f : 0.0f) : g;
        }
    }

    std::ofstream out(fs::path(args.out_dir) / "latent.csv");
    if (!out) throw IoError("cannot write latent.csv");
    out << "item,class,has_x,has_w";
    LatentStats<float> probe = extract_latent(model, &x_rows, &test.w, n, cfg.seed, cfg.eval_t);
    for (std::size_t d = 0; d < probe.dim; ++d) out << ",mu_" << d;
    for (std::size_t d = 0; d < probe.dim; ++d) out << ",var_" << d;
    out << "\n";
    auto emit = [&](const LatentStats<float>& st) {
        for (std::size_t i = 0; i < n; ++i) {
            out << i << "," << test.labels[i] << "," << (st.had_x ? 1 : 0) << ","
                << (st.had_w ? 1 : 0);
            for (std::size_t d = 0; d < st.dim; ++d) out << "," << fmt(st.mu[i * st.dim + d]);
            for (std::size_t d = 0; d < st.dim; ++d) out << "," << fmt(st.var[i * st.dim + d]);
            out << "\n";
        }
    };
    emit(probe);  // both modalities
    if (model.kind != ModelKind::vae && model.kind != ModelKind::cvae)
        emit(extract_latent(model, nullptr, &test.w, n, cfg.seed, cfg.eval_t));  // label only
    manifest.note("latent.csv");
    manifest.write(args.out_dir, cfg);
    return 0;
}

int run_shift(const CommonArgs& args) {
    auto [model, cfg] = load_model_for(args);
    if (model.kind != ModelKind::jmvae_kl)
        throw UnsupportedOperation("shift needs a jmvae_kl checkpoint");
    if (model.mx.kind != ModalityKind::bernoulli)
        throw ConfigError("shift renders image modalities only");
    fs::create_directories(args.out_dir);
    RunManifest manifest{"shift"};
    DatasetPair data = load_datasets(cfg);
    if (data.test.n == 0) throw ConfigError("shift needs a test split");
    const std::size_t n = std::min(cfg.shift_items, data.test.n);
    const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(double(model.mx.dim))));

    std::vector<std::vector<float>> cells;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> x(data.test.x.begin() + i * data.test.x_dim,
                             data.test.x.begin() + (i + 1) * data.test.x_dim);
        auto r = modality_shift(model, x, cfg.shift_target);
        cells.push_back(x);
        cells.push_back(r.x_shifted);
    }
    write_pgm_grid((fs::path(args.out_dir) / "shift.pgm").string(), cells, n, 2, side, side);
    manifest.note("shift.pgm");
    manifest.write(args.out_dir, cfg);
    return 0;
}

int run_selftest(const CommonArgs& args) {
    std::uint64_t seed = args.seed_override >= 0 ? std::uint64_t(args.seed_override) : 2026;
    auto results = selfcheck::run_selftest(seed);
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "[ok]   " : "[FAIL] ") << r.name;
        if (!r.detail.empty()) std::cout << " -- " << r.detail;
        std::cout << "\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"jmvl: a joint bimodal VAE laboratory"};
    app.require_subcommand(1);
    CommonArgs args;

    auto add_common = [&args](CLI::App* cmd, bool needs_ckpt) {
        cmd->add_option("--config", args.config_path, "config file (key = value) or a manifest.json");
        cmd->add_option("--set", args.overrides, "override KEY=VALUE (repeatable)");
        cmd->add_option("--out", args.out_dir, "output directory");
        cmd->add_option("--seed", args.seed_override, "override the run seed");
        if (needs_ckpt) cmd->add_option("--checkpoint", args.checkpoint, "checkpoint to load");
    };
    add_common(app.add_subcommand("train", "train a model per the config"), false);
    add_common(app.add_subcommand("eval", "conditional log-likelihood report"), true);
    add_common(app.add_subcommand("generate", "per-class digit grids"), true);
    add_common(app.add_subcommand("complement", "iterative-sampling trajectory frames"), true);
    add_common(app.add_subcommand("latent", "latent posterior CSV export"), true);
    add_common(app.add_subcommand("shift", "additive attribute edit images"), true);
    add_common(app.add_subcommand("selftest", "run the oracle suite"), false);

    CLI11_PARSE(app, argc, argv);

    try {
        std::string verb = app.get_subcommands().front()->get_name();
        if (verb == "train") return run_train(args);
        if (verb == "eval") return run_eval(args);
        if (verb == "generate") return run_generate(args);
        if (verb == "complement") return run_complement(args);
        if (verb == "latent") return run_latent(args);
        if (verb == "shift") return run_shift(args);
        if (verb == "selftest") return run_selftest(args);
        std::cerr << "unknown command\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const NumericsError& e) {
        std::cerr << "numerics error: " << e.what() << "\n";
        return 2;
    } catch (const RangeError& e) {
        std::cerr << "numerics error: " << e.what() << "\n";
        return 2;
    } catch (const SupportError& e) {
        std::cerr << "numerics error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
