#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "jmvl/arch.hpp"
#include "jmvl/common.hpp"
#include "jmvl/models.hpp"

namespace jmvl {

/// Everything a run needs, parsed from flat `key = value` text. Unknown keys
/// are errors; the echoed map materializes defaults so a rerun from the echo
/// is complete.
struct TrainConfig {
    ModelKind model = ModelKind::jmvae;
    std::string dataset = "mnist";  // mnist | toy

    std::string mnist_images, mnist_labels;
    std::string mnist_test_images, mnist_test_labels;
    std::size_t train_items = 0;  // 0 = split default (50000 for mnist)
    std::size_t test_items = 0;   // 0 = all

    std::size_t toy_clusters = 4;
    std::size_t toy_x_dim = 8;
    std::size_t toy_items = 2000;
    std::size_t toy_test_items = 500;
    std::uint64_t toy_seed = 7;

    std::size_t latent_dim = 64;
    std::size_t latent_dim2 = 0;  // 0 = latent_dim
    ModelArchs archs;

    double lr = 1e-3;
    std::size_t epochs = 2000;
    std::size_t warmup_epochs = 200;  // N_t
    std::size_t batch_size = 100;
    std::uint64_t seed = 1;
    std::size_t mc_samples = 1;
    std::string warmup_scope = "all";  // all | prior_only
    double kl_extra_coeff = 1.0;
    std::string cvae_direction = "x_given_w";  // x_given_w | w_given_x

    std::string eval_direction = "x_given_w";  // x_given_w (label->image on mnist) | w_given_x
    std::size_t eval_n = 10;
    std::size_t eval_t = 10;
    std::size_t eval_items = 0;  // 0 = all test items
    std::string complement_init = "zeros";  // zeros | prior

    std::size_t gen_per_class = 8;
    int shift_target = 8;
    std::size_t shift_items = 8;

    std::map<std::string, std::string> echo;  // effective config, defaults included
};

namespace detail {

inline const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys = {
        "model", "dataset",
        "mnist_images", "mnist_labels", "mnist_test_images", "mnist_test_labels",
        "train_items", "test_items",
        "toy_clusters", "toy_x_dim", "toy_items", "toy_test_items", "toy_seed",
        "latent_dim", "latent_dim2",
        "arch_enc_joint", "arch_enc_x", "arch_enc_w", "arch_dec_x", "arch_dec_w",
        "arch_h2_tail", "arch_prior_z1",
        "lr", "epochs", "warmup_epochs", "batch_size", "seed", "mc_samples",
        "warmup_scope", "kl_extra_coeff", "cvae_direction",
        "eval_direction", "eval_n", "eval_t", "eval_items", "complement_init",
        "gen_per_class", "shift_target", "shift_items",
    };
    return keys;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        std::uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
    }
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

}  // namespace detail

/// Parses `key = value` lines; '#' starts a comment, blank lines skipped.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(s.substr(0, eq));
        std::string value = detail::trim(s.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (kv.count(key))
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv[key] = value;
    }
    return kv;
}

inline TrainConfig config_from_map(std::map<std::string, std::string> kv) {
    for (const auto& [k, v] : kv)
        if (!detail::known_config_keys().count(k)) throw ConfigError("unknown config key '" + k + "'");

    TrainConfig c;
    auto take = [&kv](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto* v = take("model")) c.model = model_kind_from(*v);
    if (auto* v = take("dataset")) c.dataset = *v;
    if (auto* v = take("mnist_images")) c.mnist_images = *v;
    if (auto* v = take("mnist_labels")) c.mnist_labels = *v;
    if (auto* v = take("mnist_test_images")) c.mnist_test_images = *v;
    if (auto* v = take("mnist_test_labels")) c.mnist_test_labels = *v;
    if (auto* v = take("train_items")) c.train_items = detail::to_u64("train_items", *v);
    if (auto* v = take("test_items")) c.test_items = detail::to_u64("test_items", *v);
    if (auto* v = take("toy_clusters")) c.toy_clusters = detail::to_u64("toy_clusters", *v);
    if (auto* v = take("toy_x_dim")) c.toy_x_dim = detail::to_u64("toy_x_dim", *v);
    if (auto* v = take("toy_items")) c.toy_items = detail::to_u64("toy_items", *v);
    if (auto* v = take("toy_test_items")) c.toy_test_items = detail::to_u64("toy_test_items", *v);
    if (auto* v = take("toy_seed")) c.toy_seed = detail::to_u64("toy_seed", *v);
    if (auto* v = take("latent_dim")) c.latent_dim = detail::to_u64("latent_dim", *v);
    if (auto* v = take("latent_dim2")) c.latent_dim2 = detail::to_u64("latent_dim2", *v);
    if (auto* v = take("arch_enc_joint")) c.archs.enc_joint = *v;
    if (auto* v = take("arch_enc_x")) c.archs.enc_x = *v;
    if (auto* v = take("arch_enc_w")) c.archs.enc_w = *v;
    if (auto* v = take("arch_dec_x")) c.archs.dec_x = *v;
    if (auto* v = take("arch_dec_w")) c.archs.dec_w = *v;
    if (auto* v = take("arch_h2_tail")) c.archs.h2_tail = *v;
    if (auto* v = take("arch_prior_z1")) c.archs.prior_z1 = *v;
    if (auto* v = take("lr")) c.lr = detail::to_double("lr", *v);
    if (auto* v = take("epochs")) c.epochs = detail::to_u64("epochs", *v);
    if (auto* v = take("warmup_epochs")) c.warmup_epochs = detail::to_u64("warmup_epochs", *v);
    if (auto* v = take("batch_size")) c.batch_size = detail::to_u64("batch_size", *v);
    if (auto* v = take("seed")) c.seed = detail::to_u64("seed", *v);
    if (auto* v = take("mc_samples")) c.mc_samples = detail::to_u64("mc_samples", *v);
    if (auto* v = take("warmup_scope")) c.warmup_scope = *v;
    if (auto* v = take("kl_extra_coeff")) c.kl_extra_coeff = detail::to_double("kl_extra_coeff", *v);
    if (auto* v = take("cvae_direction")) c.cvae_direction = *v;
    if (auto* v = take("eval_direction")) c.eval_direction = *v;
    if (auto* v = take("eval_n")) c.eval_n = detail::to_u64("eval_n", *v);
    if (auto* v = take("eval_t")) c.eval_t = detail::to_u64("eval_t", *v);
    if (auto* v = take("eval_items")) c.eval_items = detail::to_u64("eval_items", *v);
    if (auto* v = take("complement_init")) c.complement_init = *v;
    if (auto* v = take("gen_per_class")) c.gen_per_class = detail::to_u64("gen_per_class", *v);
    if (auto* v = take("shift_target"))
        c.shift_target = static_cast<int>(detail::to_u64("shift_target", *v));
    if (auto* v = take("shift_items")) c.shift_items = detail::to_u64("shift_items", *v);

    // validation
    if (c.dataset != "mnist" && c.dataset != "toy")
        throw ConfigError("dataset must be 'mnist' or 'toy', got '" + c.dataset + "'");
    if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (c.warmup_epochs < 1) throw ConfigError("warmup_epochs must be >= 1");
    if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (c.latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (c.mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
    if (!(c.lr > 0)) throw ConfigError("lr must be > 0");
    if (c.warmup_scope != "all" && c.warmup_scope != "prior_only")
        throw ConfigError("warmup_scope must be 'all' or 'prior_only'");
    if (c.cvae_direction != "x_given_w" && c.cvae_direction != "w_given_x")
        throw ConfigError("cvae_direction must be 'x_given_w' or 'w_given_x'");
    if (c.eval_direction != "x_given_w" && c.eval_direction != "w_given_x")
        throw ConfigError("eval_direction must be 'x_given_w' or 'w_given_x'");
    if (c.eval_n < 1) throw ConfigError("eval_n must be >= 1");
    if (c.eval_t < 1) throw ConfigError("eval_t must be >= 1");
    if (c.complement_init != "zeros" && c.complement_init != "prior")
        throw ConfigError("complement_init must be 'zeros' or 'prior'");
    if (c.shift_target < 0 || c.shift_target > 9) throw ConfigError("shift_target must be a digit class");
    // canonicalize architecture strings (also rejects malformed ones early)
    for (std::string* s : {&c.archs.enc_joint, &c.archs.enc_x, &c.archs.enc_w, &c.archs.dec_x,
                           &c.archs.dec_w, &c.archs.h2_tail, &c.archs.prior_z1})
        *s = render_arch(parse_arch(*s));

    // effective echo, defaults materialized, canonical arch strings
    auto put = [&c](const char* k, const std::string& v) { c.echo[k] = v; };
    put("model", model_kind_name(c.model));
    put("dataset", c.dataset);
    put("mnist_images", c.mnist_images);
    put("mnist_labels", c.mnist_labels);
    put("mnist_test_images", c.mnist_test_images);
    put("mnist_test_labels", c.mnist_test_labels);
    put("train_items", std::to_string(c.train_items));
    put("test_items", std::to_string(c.test_items));
    put("toy_clusters", std::to_string(c.toy_clusters));
    put("toy_x_dim", std::to_string(c.toy_x_dim));
    put("toy_items", std::to_string(c.toy_items));
    put("toy_test_items", std::to_string(c.toy_test_items));
    put("toy_seed", std::to_string(c.toy_seed));
    put("latent_dim", std::to_string(c.latent_dim));
    put("latent_dim2", std::to_string(c.latent_dim2));
    put("arch_enc_joint", c.archs.enc_joint);
    put("arch_enc_x", c.archs.enc_x);
    put("arch_enc_w", c.archs.enc_w);
    put("arch_dec_x", c.archs.dec_x);
    put("arch_dec_w", c.archs.dec_w);
    put("arch_h2_tail", c.archs.h2_tail);
    put("arch_prior_z1", c.archs.prior_z1);
    {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", c.lr);
        put("lr", buf);
        std::snprintf(buf, sizeof buf, "%.17g", c.kl_extra_coeff);
        put("kl_extra_coeff", buf);
    }
    put("epochs", std::to_string(c.epochs));
    put("warmup_epochs", std::to_string(c.warmup_epochs));
    put("batch_size", std::to_string(c.batch_size));
    put("seed", std::to_string(c.seed));
    put("mc_samples", std::to_string(c.mc_samples));
    put("warmup_scope", c.warmup_scope);
    put("cvae_direction", c.cvae_direction);
    put("eval_direction", c.eval_direction);
    put("eval_n", std::to_string(c.eval_n));
    put("eval_t", std::to_string(c.eval_t));
    put("eval_items", std::to_string(c.eval_items));
    put("complement_init", c.complement_init);
    put("gen_per_class", std::to_string(c.gen_per_class));
    put("shift_target", std::to_string(c.shift_target));
    put("shift_items", std::to_string(c.shift_items));
    return c;
}

inline TrainConfig parse_config_text(const std::string& text) {
    return config_from_map(parse_kv_text(text));
}

inline TrainConfig load_config(const std::string& path,
                               const std::map<std::string, std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    auto kv = parse_kv_text(ss.str());
    for (const auto& [k, v] : overrides) kv[k] = v;  // applied before validation
    return config_from_map(std::move(kv));
}

}  // namespace jmvl
