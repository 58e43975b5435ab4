#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transmat/mgf.hpp"

namespace transmat {

struct NetworkConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    uint64_t init_seed = 0;

    void validate() const;
    /// Canonical `key = value` lines; equal configs give identical text.
    std::vector<std::pair<std::string, std::string>> to_entries() const;
    static NetworkConfig from_entries(const std::vector<std::pair<std::string, std::string>>& entries);
    /// FNV-1a 64 of the canonical text.
    uint64_t hash() const;
};

uint64_t fnv1a64(const std::string& text);

/// The full matting network: CNN local extractor, TGTB stages, MGF decoder.
template <class T>
class Network {
public:
    explicit Network(const NetworkConfig& cfg);

    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    /// `input` is [N, H, W, 4] from network_input(); returns alpha [N, H, W, 1].
    Var<T> forward(const Tensor<T>& input, const LabelGrid& trimap, bool training,
                   FeaturePyramid<T>* pyramid = nullptr) const;

    const NetworkConfig& config() const { return cfg_; }
    nn::ParameterSet<T>& parameters() { return params_; }
    const nn::ParameterSet<T>& parameters() const { return params_; }
    int64_t parameter_count() const { return params_.parameter_count(); }
    const Encoder<T>& encoder() const { return encoder_; }
    const Decoder<T>& decoder() const { return decoder_; }

private:
    NetworkConfig cfg_;
    nn::ParameterSet<T> params_;
    Rng init_rng_;
    Encoder<T> encoder_;
    Decoder<T> decoder_;
};

}  // namespace transmat
