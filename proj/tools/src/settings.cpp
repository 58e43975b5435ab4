#include "settings.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace transmat::cli {

namespace {

using train::ExperimentConfig;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class V>
V parse(const std::string& key, const std::string& text) {
    V v{};
    const auto* end = text.data() + text.size();
    std::from_chars_result r;
    if constexpr (std::is_floating_point_v<V>) {
        // from_chars for double is incomplete on older toolchains.
        char* stop = nullptr;
        v = static_cast<V>(std::strtod(text.c_str(), &stop));
        r.ptr = stop;
        r.ec = text.empty() ? std::errc::invalid_argument : std::errc();
    } else {
        r = std::from_chars(text.data(), end, v);
    }
    if (r.ec != std::errc() || r.ptr != end) throw ConfigError("bad value for " + key + ": '" + text + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("bad boolean for " + key + ": '" + text + "'");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class V>
std::string fmt_int(V v) {
    return std::to_string(v);
}

const char* fmt_bool(bool b) { return b ? "true" : "false"; }

#define INT_SETTING(sec, name, field, help)                                                           \
    Setting{sec, name, help, false, [](const ExperimentConfig& c) { return fmt_int(c.field); },     \
            [](ExperimentConfig& c, const std::string& v) { c.field = parse<decltype(c.field)>(name, v); }}
#define REAL_SETTING(sec, name, field, help)                                                          \
    Setting{sec, name, help, false, [](const ExperimentConfig& c) { return fmt(c.field); },         \
            [](ExperimentConfig& c, const std::string& v) { c.field = parse<double>(name, v); }}
#define BOOL_SETTING(sec, name, field, help)                                                          \
    Setting{sec, name, help, true, [](const ExperimentConfig& c) { return std::string(fmt_bool(c.field)); }, \
            [](ExperimentConfig& c, const std::string& v) { c.field = parse_bool(name, v); }}

// Network keys go through NetworkConfig's own entry codec.
Setting network_setting(const std::string& key, const std::string& help, bool boolean) {
    return Setting{"network", key, help, boolean,
                   [key](const ExperimentConfig& c) {
                       for (const auto& [k, v] : c.network.to_entries())
                           if (k == key) return v;
                       return std::string();
                   },
                   [key](ExperimentConfig& c, const std::string& v) {
                       auto entries = c.network.to_entries();
                       for (auto& [k, old] : entries)
                           if (k == key) old = v;
                       c.network = NetworkConfig::from_entries(entries);
                   }};
}

std::vector<Setting> build() {
    std::vector<Setting> s{
        INT_SETTING("train", "iterations", train.iterations, "optimizer steps"),
        INT_SETTING("train", "batch_size", train.batch_size, "samples per step"),
        REAL_SETTING("train", "learning_rate", train.learning_rate, "initial learning rate"),
        REAL_SETTING("train", "lr_floor", train.lr_floor, "learning rate at the end of each cosine period"),
        INT_SETTING("train", "restart_period", train.restart_period, "first cosine period; 0 = iterations/8"),
        INT_SETTING("train", "seed", train.seed, "seed for initialization and data"),
        REAL_SETTING("train", "grad_clip", train.grad_clip, "global gradient norm clip; 0 disables"),
        INT_SETTING("train", "checkpoint_every", train.checkpoint_every, "checkpoint period in iterations; 0 = final only"),
        BOOL_SETTING("train", "fixed_samples", train.fixed_samples, "train on unaugmented samples in order"),
        INT_SETTING("train", "workers", train.workers, "data loading threads"),
    };
    for (const auto& [key, value] : NetworkConfig{}.to_entries()) {
        if (key == "init_seed") continue;  // follows seed
        const bool boolean = value == "true" || value == "false";
        s.push_back(network_setting(key, "network " + key, boolean));
    }
    const std::vector<Setting> rest{
        INT_SETTING("data", "crop_size", data.crop_size, "training crop side"),
        INT_SETTING("data", "trimap_kernel_min", data.trimap_kernel_min, "smallest trimap erosion radius"),
        INT_SETTING("data", "trimap_kernel_max", data.trimap_kernel_max, "largest trimap erosion radius"),
        REAL_SETTING("data", "flip_probability", data.flip_probability, "horizontal flip probability"),
        REAL_SETTING("data", "scale_min", data.scale_min, "smallest random scale"),
        REAL_SETTING("data", "scale_max", data.scale_max, "largest random scale"),
        REAL_SETTING("data", "rotation_range", data.rotation_range, "rotation range in degrees"),
        REAL_SETTING("data", "shear_range", data.shear_range, "shear range in degrees"),
        REAL_SETTING("data", "fg_threshold", data.thresholds.fg, "alpha at or above which a pixel is FG"),
        REAL_SETTING("data", "bg_threshold", data.thresholds.bg, "alpha at or below which a pixel is BG"),
        REAL_SETTING("loss", "weight_alpha", loss.weights.alpha, "alpha prediction loss weight"),
        REAL_SETTING("loss", "weight_comp", loss.weights.comp, "composition loss weight"),
        REAL_SETTING("loss", "weight_lap", loss.weights.lap, "Laplacian loss weight"),
        BOOL_SETTING("loss", "lap_mask_unknown", loss.lap_mask_unknown, "restrict the Laplacian loss to UNK"),
        INT_SETTING("loss", "lap_levels", loss.lap_levels, "maximum Laplacian pyramid levels"),
    };
    s.insert(s.end(), rest.begin(), rest.end());
    return s;
}

#undef INT_SETTING
#undef REAL_SETTING
#undef BOOL_SETTING

}  // namespace

const std::vector<Setting>& settings() {
    static const std::vector<Setting> all = build();
    return all;
}

const Setting* find_setting(const std::string& key) {
    for (const auto& s : settings())
        if (s.key == key) return &s;
    return nullptr;
}

void apply_config_text(const std::string& text, train::ExperimentConfig& cfg, const std::string& origin) {
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    auto fail = [&](const std::string& what) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "train" && section != "network" && section != "data" && section != "loss") {
                fail("unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (section.empty()) fail("key '" + key + "' outside a section");
        const Setting* s = find_setting(key);
        if (!s) fail("unknown key '" + key + "'");
        if (s->section != section) fail("key '" + key + "' belongs in [" + s->section + "]");
        try {
            s->set(cfg, value);
        } catch (const ConfigError& e) {
            fail(e.what());
        }
    }
}

void apply_config_file(const std::filesystem::path& path, train::ExperimentConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(ss.str(), cfg, path.string());
}

std::string to_config_text(const train::ExperimentConfig& cfg) {
    std::string out, section;
    for (const auto& s : settings()) {
        if (s.section != section) {
            out += (section.empty() ? "[" : "\n[") + s.section + "]\n";
            section = s.section;
        }
        out += s.key + " = " + s.get(cfg) + "\n";
    }
    return out;
}

}  // namespace transmat::cli
