#include "relbal/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "relbal/error.hpp"
#include "relbal/random.hpp"

namespace relbal {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(trim(cur));
    return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("config: key '" + key + "' expects " + expected + ", got '" + value + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
        const auto x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        bad_value(key, v, "a nonnegative integer");
    }
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        bad_value(key, v, "a finite real");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(key, v, "a boolean");
}

std::vector<double> parse_reals(const std::string& key, const std::string& v) {
    std::vector<double> out;
    if (v.empty()) return out;
    for (const auto& p : split(v, ',')) out.push_back(parse_real(key, p));
    return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& p : split(v, ',')) out.push_back(parse_u64(key, p));
    return out;
}

std::string real_text(double x) {
    std::ostringstream o;
    o << std::setprecision(17) << x;
    return o.str();
}

template <class T>
std::string list_text(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_floating_point_v<T>)
            out += real_text(v[i]);
        else
            out += std::to_string(v[i]);
    }
    return out;
}

struct KeyDef {
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define RB_SIZE(name, field)                                                                                       \
    KeyDef{name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_u64(k, v); }, \
           [](const ExperimentConfig& c) { return std::to_string(c.field); }}
#define RB_REAL(name, field)                                                                                        \
    KeyDef{name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_real(k, v); }, \
           [](const ExperimentConfig& c) { return real_text(c.field); }}
#define RB_BOOL(name, field)                                                                                        \
    KeyDef{name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }, \
           [](const ExperimentConfig& c) { return std::string(c.field ? "true" : "false"); }}
#define RB_REALS(name, field)                                                                                         \
    KeyDef{name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_reals(k, v); }, \
           [](const ExperimentConfig& c) { return list_text(c.field); }}
#define RB_SIZES(name, field)                                                                                         \
    KeyDef{name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_sizes(k, v); }, \
           [](const ExperimentConfig& c) { return list_text(c.field); }}

const std::vector<KeyDef>& key_table() {
    static const std::vector<KeyDef> table = {
        RB_SIZE("data.n_classes", data.n_classes),
        RB_SIZE("data.samples_per_class", data.samples_per_class),
        RB_REAL("data.separation", data.separation),
        RB_REAL("data.spread", data.spread),
        KeyDef{"data.confusion_pairs",
               [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.data.confusion_pairs.clear();
                   if (v.empty() || v == "none") return;
                   for (const auto& p : split(v, ',')) {
                       const auto ab = split(p, ':');
                       if (ab.size() != 2) bad_value(k, v, "pairs written as a:b separated by commas");
                       c.data.confusion_pairs.push_back({parse_u64(k, ab[0]), parse_u64(k, ab[1])});
                   }
               },
               [](const ExperimentConfig& c) {
                   if (c.data.confusion_pairs.empty()) return std::string("none");
                   std::string out;
                   for (const auto& p : c.data.confusion_pairs) {
                       if (!out.empty()) out += ",";
                       out += std::to_string(p.a) + ":" + std::to_string(p.b);
                   }
                   return out;
               }},
        RB_REAL("data.confusion_strength", data.confusion_strength),
        RB_REAL("data.imbalance", data.imbalance),
        RB_SIZE("data.groups_per_class", data.groups_per_class),
        RB_REAL("data.group_scale", data.group_scale),
        RB_SIZE("data.latent_extra", data.latent_extra),
        RB_SIZE("data.source_size", data.source_size),
        RB_SIZE("data.image_channels", data.image_channels),
        RB_SIZE("data.landmark_channels", data.landmark_channels),
        KeyDef{"data.seed",
               [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   if (v == "auto")
                       c.data_seed.reset();
                   else
                       c.data_seed = parse_u64(k, v);
               },
               [](const ExperimentConfig& c) { return c.data_seed ? std::to_string(*c.data_seed) : std::string("auto"); }},
        RB_SIZE("data.test_per_class", test_per_class),
        KeyDef{"data.dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data_dir = v; },
               [](const ExperimentConfig& c) { return c.data_dir; }},
        RB_SIZES("encoder.grid_sides", encoder.grid_sides),
        RB_SIZES("encoder.window_sides", encoder.window_sides),
        RB_SIZE("encoder.dim", encoder.dim),
        RB_SIZE("encoder.heads", encoder.heads),
        RB_SIZE("encoder.embed_dim", encoder.embed_dim),
        RB_SIZE("encoder.mlp_hidden", encoder.mlp_hidden),
        RB_SIZE("rb.k", rb.k),
        RB_REAL("rb.delta", rb.delta),
        RB_SIZE("rb.tokens", rb.tokens),
        RB_SIZE("rb.heads", rb.heads),
        RB_BOOL("rb.anchors", rb.anchors),
        RB_BOOL("rb.mhsa", rb.mhsa),
        RB_SIZE("head.hidden", head.hidden),
        RB_REAL("head.dropout", head.dropout),
        RB_BOOL("head.recalibrate_bn", head.recalibrate_bn),
        RB_REAL("loss.cls", loss.cls),
        RB_REAL("loss.anchor", loss.anchor),
        RB_REAL("loss.center", loss.center),
        RB_REAL("optim.lr", optim.lr0),
        RB_REAL("optim.gamma", optim.gamma),
        RB_SIZE("optim.epochs", epochs),
        RB_SIZE("optim.minibatch", minibatch),
        RB_SIZE("refine.n_pg", refine.n_pg),
        RB_SIZE("refine.b", refine.b),
        RB_REAL("noise.rate", noise_rate),
        RB_REAL("smoothing.term", smoothing_term),
        RB_BOOL("augment.enabled", augment_enabled),
        RB_SIZE("augment.crop", augment.crop),
        RB_REAL("augment.flip", augment.flip_probability),
        RB_REAL("augment.rotation", augment.max_rotation_deg),
        RB_REAL("augment.jitter", augment.jitter),
        RB_SIZE("seed", seed),
        KeyDef{"output_dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
               [](const ExperimentConfig& c) { return c.output_dir; }},
        RB_REALS("ablate.k", ablate.k),
        RB_REALS("ablate.noise", ablate.noise),
        RB_REALS("ablate.smoothing", ablate.smoothing),
        RB_REALS("ablate.lambda", ablate.lambda),
        RB_REALS("ablate.table_k", ablate.table_k),
        RB_SIZE("ablate.seeds", ablate.seeds),
        RB_SIZE("ablate.workers", ablate.workers),
        RB_BOOL("ablate.paired", ablate.paired),
    };
    return table;
}

#undef RB_SIZE
#undef RB_REAL
#undef RB_BOOL
#undef RB_REALS
#undef RB_SIZES

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError("config: " + message);
}

}  // namespace

void ExperimentConfig::validate() const {
    dataset_spec().validate();
    encoder.validate();
    require(test_per_class > 0, "data.test_per_class must be positive");
    require(augment.crop >= 1 && augment.crop <= data.source_size, "augment.crop must lie in [1, data.source_size]");
    for (auto g : encoder.grid_sides) require(g <= augment.crop, "encoder grid sides must not exceed augment.crop");
    require(rb.k <= 1000, "rb.k must be at most 1000");
    require(rb.delta > 0.0, "rb.delta must be positive");
    require(rb.tokens > 0 && encoder.embed_dim % rb.tokens == 0, "rb.tokens must divide encoder.embed_dim");
    require(rb.heads > 0 && (encoder.embed_dim / rb.tokens) % rb.heads == 0,
            "rb.heads must divide the corrector token width");
    require(head.hidden > 0, "head.hidden must be positive");
    require(head.dropout >= 0.0 && head.dropout < 1.0, "head.dropout must lie in [0, 1)");
    loss.validate();
    require(optim.lr0 > 0.0, "optim.lr must be positive");
    require(optim.gamma > 0.0 && optim.gamma <= 1.0, "optim.gamma must lie in (0, 1]");
    require(epochs >= 1, "optim.epochs must be at least 1");
    require(minibatch != 1, "optim.minibatch must be 0 or at least 2 (batch normalisation needs two rows)");
    refine.validate();
    require(refine.b * data.n_classes >= 2, "refined batch must hold at least two samples");
    require(noise_rate >= 0.0 && noise_rate <= 0.5, "noise.rate must lie in [0, 0.5]");
    require(smoothing_term >= 0.0 && smoothing_term <= 50.0, "smoothing.term must lie in [0, 50]");
    require(augment.flip_probability >= 0.0 && augment.flip_probability <= 1.0, "augment.flip must lie in [0, 1]");
    require(augment.max_rotation_deg >= 0.0 && augment.max_rotation_deg <= 180.0,
            "augment.rotation must lie in [0, 180]");
    require(augment.jitter >= 0.0 && augment.jitter < 1.0, "augment.jitter must lie in [0, 1)");
    require(ablate.seeds >= 1, "ablate.seeds must be at least 1");
    require(ablate.workers >= 1, "ablate.workers must be at least 1");
}

DatasetSpec ExperimentConfig::dataset_spec() const {
    DatasetSpec s = data;
    s.seed = effective_data_seed();
    return s;
}

void apply_config_line(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& def : key_table())
        if (def.key == key) {
            def.set(cfg, key, value);
            return;
        }
    throw ConfigError("config: unknown key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not of the form key = value");
        try {
            apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string config_to_text(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& def : key_table()) out += def.key + " = " + def.get(cfg) + "\n";
    return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    // Where results go and how many workers produce them do not change them.
    std::string text;
    for (const auto& def : key_table())
        if (def.key != "output_dir" && def.key != "ablate.workers") text += def.key + " = " + def.get(cfg) + "\n";
    return fnv1a64(text);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& def : key_table()) out.push_back(def.key);
    return out;
}

}  // namespace relbal
