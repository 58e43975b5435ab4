#include "transmat/network.hpp"

#include <charconv>
#include <map>
#include <sstream>

namespace transmat {

namespace {

template <class V>
std::string join(const std::vector<V>& xs) {
    std::string out;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(xs[i]);
    }
    return out;
}

template <class V>
std::vector<V> split_numbers(const std::string& key, const std::string& text) {
    std::vector<V> out;
    if (text.empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        V v{};
        const auto* end = item.data() + item.size();
        const auto r = std::from_chars(item.data(), end, v);
        if (r.ec != std::errc() || r.ptr != end) throw ConfigError("bad list value for " + key + ": " + text);
        out.push_back(v);
    }
    return out;
}

template <class V>
V parse_number(const std::string& key, const std::string& text) {
    auto v = split_numbers<V>(key, text);
    if (v.size() != 1) throw ConfigError("bad value for " + key + ": " + text);
    return v[0];
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("bad boolean for " + key + ": " + text);
}

const char* str(bool b) { return b ? "true" : "false"; }

}  // namespace

uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void NetworkConfig::validate() const {
    encoder.validate();
    const auto levels = encoder.level_channels().size();
    if (decoder.widths.size() != levels) {
        throw ConfigError("decoder_widths needs " + std::to_string(levels) + " entries");
    }
    for (const auto w : decoder.widths)
        if (w < 1) throw ConfigError("decoder widths must be positive");
    if (decoder.mgf.squeeze_ratio < 1) throw ConfigError("mgf_squeeze_ratio must be at least 1");
}

std::vector<std::pair<std::string, std::string>> NetworkConfig::to_entries() const {
    const auto& a = encoder.attention;
    return {
        {"stem_widths", join(encoder.stem_widths)},
        {"embed_dims", join(a.embed_dims)},
        {"num_heads", join(a.num_heads)},
        {"window_size", std::to_string(a.window_size)},
        {"mlp_ratio", std::to_string(a.mlp_ratio)},
        {"blocks_per_stage", join(a.blocks_per_stage)},
        {"tri_token_period", std::to_string(a.tri_token_period)},
        {"relative_position_bias", str(a.relative_position_bias)},
        {"use_tgtb", str(encoder.use_tgtb)},
        {"tri_token_stages", join(encoder.tri_token_stages)},
        {"use_mgf", str(decoder.use_mgf)},
        {"mgf_local", str(decoder.mgf.local)},
        {"mgf_global", str(decoder.mgf.global)},
        {"mgf_squeeze_ratio", std::to_string(decoder.mgf.squeeze_ratio)},
        {"decoder_widths", join(decoder.widths)},
        {"init_seed", std::to_string(init_seed)},
    };
}

NetworkConfig NetworkConfig::from_entries(const std::vector<std::pair<std::string, std::string>>& entries) {
    NetworkConfig c;
    auto& a = c.encoder.attention;
    for (const auto& [k, v] : entries) {
        if (k == "stem_widths") c.encoder.stem_widths = split_numbers<int64_t>(k, v);
        else if (k == "embed_dims") a.embed_dims = split_numbers<int64_t>(k, v);
        else if (k == "num_heads") a.num_heads = split_numbers<int>(k, v);
        else if (k == "window_size") a.window_size = parse_number<int>(k, v);
        else if (k == "mlp_ratio") a.mlp_ratio = parse_number<int>(k, v);
        else if (k == "blocks_per_stage") a.blocks_per_stage = split_numbers<int>(k, v);
        else if (k == "tri_token_period") a.tri_token_period = parse_number<int>(k, v);
        else if (k == "relative_position_bias") a.relative_position_bias = parse_bool(k, v);
        else if (k == "use_tgtb") c.encoder.use_tgtb = parse_bool(k, v);
        else if (k == "tri_token_stages") c.encoder.tri_token_stages = split_numbers<int>(k, v);
        else if (k == "use_mgf") c.decoder.use_mgf = parse_bool(k, v);
        else if (k == "mgf_local") c.decoder.mgf.local = parse_bool(k, v);
        else if (k == "mgf_global") c.decoder.mgf.global = parse_bool(k, v);
        else if (k == "mgf_squeeze_ratio") c.decoder.mgf.squeeze_ratio = parse_number<int>(k, v);
        else if (k == "decoder_widths") c.decoder.widths = split_numbers<int64_t>(k, v);
        else if (k == "init_seed") c.init_seed = parse_number<uint64_t>(k, v);
        else throw ConfigError("unknown network key " + k);
    }
    return c;
}

uint64_t NetworkConfig::hash() const {
    std::string text;
    for (const auto& [k, v] : to_entries()) text += k + " = " + v + "\n";
    return fnv1a64(text);
}

template <class T>
Network<T>::Network(const NetworkConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      init_rng_(make_rng(cfg.init_seed, 0x6e6574)),
      encoder_(nn::Scope<T>{&params_, "encoder", &init_rng_}, cfg.encoder),
      decoder_(nn::Scope<T>{&params_, "decoder", &init_rng_}, cfg.encoder.level_channels(),
               Encoder<T>::kInputChannels, cfg.decoder) {}

template <class T>
Var<T> Network<T>::forward(const Tensor<T>& input, const LabelGrid& trimap, bool training,
                           FeaturePyramid<T>* pyramid) const {
    const Var<T> x = Var<T>::constant(input);
    FeaturePyramid<T> p = encoder_(x, trimap, training);
    Var<T> alpha = decoder_(p, x, trimap, training);
    if (pyramid) *pyramid = std::move(p);
    return alpha;
}

template class Network<float>;
template class Network<double>;

}  // namespace transmat
