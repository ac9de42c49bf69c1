#include "direal/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include "direal/errors.hpp"

namespace direal {

namespace {

constexpr std::array kKnownKeys = {
    // dataset selection and parameters
    "dataset", "ring_modes", "ring_radius", "ring_sigma", "ring_n", "grid_spacing",
    "grid_sigma", "grid_n", "idx_images", "idx_labels",
    // optimization
    "lr", "beta1", "beta2", "batch_size", "epochs", "latent_dim", "seed", "max_steps",
    // diversity regularization
    "tau", "lambda_g", "lambda_d", "variant", "d_layers", "g_layers",
    // regularizer mode and baselines
    "regularizer", "clip_c", "spectral_iters",
    // losses and architecture
    "generator_loss", "hidden",
    // diagnostics and artifact emission
    "eval_every", "w_div_window", "out_dir", "checkpoint_every", "sample_every",
    "sample_n", "eval_n", "eval_seed", "eval_batches",
};

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

}  // namespace

bool ConfigMap::known_key(const std::string& key) {
    return std::find(kKnownKeys.begin(), kKnownKeys.end(), key) != kKnownKeys.end();
}

void ConfigMap::set(const std::string& key, const std::string& value) {
    if (!known_key(key)) throw ConfigError("unknown configuration key '" + key + "'", key);
    values_[key] = value;
}

bool ConfigMap::has(const std::string& key) const { return values_.count(key) > 0; }

std::string ConfigMap::get_str(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double ConfigMap::get_real(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + it->second + "' is not a number", key);
    }
}

std::uint64_t ConfigMap::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const std::string& s = it->second;
        if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
        const unsigned long long v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(
            "key '" + key + "': '" + it->second + "' is not a non-negative integer", key);
    }
}

std::size_t ConfigMap::get_count(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
}

std::vector<std::size_t> ConfigMap::get_index_list(const std::string& key) const {
    const auto it = values_.find(key);
    std::vector<std::size_t> out;
    if (it == values_.end() || trim(it->second).empty()) return out;
    std::string rest = it->second;
    std::size_t start = 0;
    while (start <= rest.size()) {
        const std::size_t comma = rest.find(',', start);
        const std::string tok =
            trim(rest.substr(start, comma == std::string::npos ? std::string::npos
                                                               : comma - start));
        try {
            std::size_t pos = 0;
            if (tok.empty() || tok[0] == '-') throw std::invalid_argument("bad index");
            const unsigned long long v = std::stoull(tok, &pos);
            if (pos != tok.size()) throw std::invalid_argument("trailing characters");
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': '" + tok + "' is not a layer index", key);
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

ConfigMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'", "config");
    ConfigMap cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + " of '" + path +
                                  "' is not a key = value pair: '" + stripped + "'",
                              stripped);
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + " of '" + path +
                                  "' has an empty key",
                              key);
        if (!ConfigMap::known_key(key))
            throw ConfigError("line " + std::to_string(lineno) + " of '" + path +
                                  "': unknown configuration key '" + key + "'",
                              key);
        cfg.set(key, value);
    }
    return cfg;
}

void apply_override(ConfigMap& cfg, const std::string& key_equals_value) {
    const std::size_t eq = key_equals_value.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + key_equals_value + "'",
                          key_equals_value);
    const std::string key = trim(key_equals_value.substr(0, eq));
    const std::string value = trim(key_equals_value.substr(eq + 1));
    if (!ConfigMap::known_key(key))
        throw ConfigError("unknown configuration key '" + key + "'", key);
    cfg.set(key, value);
}

Dataset build_dataset(const ConfigMap& cfg) {
    const std::string kind = cfg.get_str("dataset", "ring");
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    if (kind == "ring") {
        return gaussian_ring(cfg.get_count("ring_modes", 8), cfg.get_real("ring_radius", 2.0),
                             cfg.get_real("ring_sigma", 0.05), cfg.get_count("ring_n", 8192),
                             seed);
    }
    if (kind == "grid") {
        return grid25(cfg.get_real("grid_spacing", 1.0), cfg.get_real("grid_sigma", 0.05),
                      cfg.get_count("grid_n", 8192), seed);
    }
    if (kind == "idx") {
        if (!cfg.has("idx_images"))
            throw ConfigError("key 'idx_images' is required when dataset = idx", "idx_images");
        std::optional<std::string> labels;
        if (cfg.has("idx_labels")) labels = cfg.get_str("idx_labels", "");
        return load_idx(cfg.get_str("idx_images", ""), labels);
    }
    throw ConfigError("key 'dataset': '" + kind + "' is not one of ring|grid|idx", "dataset");
}

TrainConfig build_train_config(const ConfigMap& cfg) {
    TrainConfig tc;
    tc.lr = cfg.get_real("lr", tc.lr);
    tc.beta1 = cfg.get_real("beta1", tc.beta1);
    tc.beta2 = cfg.get_real("beta2", tc.beta2);
    tc.batch_size = cfg.get_count("batch_size", tc.batch_size);
    tc.epochs = cfg.get_count("epochs", tc.epochs);
    tc.latent_dim = cfg.get_count("latent_dim", tc.latent_dim);
    tc.div.tau = cfg.get_real("tau", tc.div.tau);
    tc.div.lambda_g = cfg.get_real("lambda_g", tc.div.lambda_g);
    tc.div.lambda_d = cfg.get_real("lambda_d", tc.div.lambda_d);

    const std::string variant = cfg.get_str("variant", "cosine");
    if (variant == "cosine")
        tc.div.variant = GramVariant::cosine;
    else if (variant == "raw")
        tc.div.variant = GramVariant::raw;
    else
        throw ConfigError("key 'variant': '" + variant + "' is not one of cosine|raw",
                          "variant");

    const std::string reg = cfg.get_str("regularizer", "direal");
    if (reg == "none")
        tc.regularizer = RegMode::none;
    else if (reg == "direal")
        tc.regularizer = RegMode::direal;
    else if (reg == "spectral")
        tc.regularizer = RegMode::spectral;
    else if (reg == "clip")
        tc.regularizer = RegMode::clip;
    else if (reg == "batchnorm-only")
        tc.regularizer = RegMode::batchnorm_only;
    else if (reg == "direal+spectral")
        tc.regularizer = RegMode::direal_spectral;
    else
        throw ConfigError("key 'regularizer': '" + reg +
                              "' is not one of none|direal|spectral|clip|batchnorm-only|"
                              "direal+spectral",
                          "regularizer");

    const std::string gl = cfg.get_str("generator_loss", "non_saturating");
    if (gl == "non_saturating")
        tc.generator_loss = GenLoss::non_saturating;
    else if (gl == "saturating")
        tc.generator_loss = GenLoss::saturating;
    else
        throw ConfigError("key 'generator_loss': '" + gl +
                              "' is not one of non_saturating|saturating",
                          "generator_loss");

    tc.clip_c = cfg.get_real("clip_c", tc.clip_c);
    tc.spectral_iters = static_cast<int>(cfg.get_count("spectral_iters",
                                                       static_cast<std::size_t>(tc.spectral_iters)));
    tc.seed = cfg.get_u64("seed", tc.seed);
    tc.eval_every = cfg.get_count("eval_every", tc.eval_every);
    tc.max_steps = cfg.get_count("max_steps", tc.max_steps);
    tc.w_div_window = cfg.get_count("w_div_window", tc.w_div_window);
    tc.hidden = cfg.get_count("hidden", tc.hidden);
    tc.d_layers = cfg.get_index_list("d_layers");
    tc.g_layers = cfg.get_index_list("g_layers");
    tc.dataset_id = cfg.get_str("dataset", "ring");

    if (!(tc.div.tau >= 0.0))
        throw ConfigError("key 'tau': threshold must be non-negative", "tau");
    if (tc.eval_every < 1)
        throw ConfigError("key 'eval_every': cadence must be at least 1", "eval_every");
    if (tc.w_div_window < 1)
        throw ConfigError("key 'w_div_window': window must be at least 1", "w_div_window");
    if (tc.latent_dim < 1)
        throw ConfigError("key 'latent_dim': must be at least 1", "latent_dim");
    if (tc.hidden < 1) throw ConfigError("key 'hidden': must be at least 1", "hidden");
    if (tc.regularizer == RegMode::clip && !(tc.clip_c > 0.0))
        throw ConfigError("key 'clip_c': clip bound must be positive", "clip_c");
    if (tc.spectral_iters < 1)
        throw ConfigError("key 'spectral_iters': must be at least 1", "spectral_iters");
    return tc;
}

}  // namespace direal
