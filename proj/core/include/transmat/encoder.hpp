#pragma once

#include <vector>

#include "transmat/tgtb.hpp"

namespace transmat {

struct EncoderConfig {
    std::vector<int64_t> stem_widths{16, 32};
    AttentionConfig attention;
    bool use_tgtb = true;
    std::vector<int> tri_token_stages{1, 2, 3, 4};  // 1-based

    void validate() const;
    bool stage_has_tokens(int stage) const;  // 0-based stage index
    /// Channel width of every pyramid level, shallow to deep.
    std::vector<int64_t> level_channels() const;
};

/// Shallow to deep; level k has half the spatial side of level k-1 (rounded up).
template <class T>
struct FeaturePyramid {
    std::vector<Var<T>> levels;
};

/// Image (RGB + encoded trimap plane) -> features at 1/2 and 1/4 resolution.
template <class T>
struct CnnLocalExtractor {
    nn::Conv2d<T> stem;
    nn::BatchNorm2d<T> stem_bn;
    nn::BasicBlock<T> block1;
    nn::BasicBlock<T> block2;

    CnnLocalExtractor() = default;
    CnnLocalExtractor(const nn::Scope<T>& s, int64_t in_channels, const std::vector<int64_t>& widths,
                      bool zero_init_residual = false);
    std::vector<Var<T>> operator()(const Var<T>& x, bool training) const;
};

template <class T>
struct Encoder {
    EncoderConfig cfg;
    CnnLocalExtractor<T> local;
    nn::Linear<T> embed;
    nn::LayerNorm<T> embed_norm;
    std::vector<TgtbStage<T>> stages;

    static constexpr int64_t kInputChannels = 4;
    static constexpr int64_t kDivisor = 32;

    Encoder() = default;
    Encoder(const nn::Scope<T>& s, const EncoderConfig& cfg);

    /// `input` is [N, H, W, 4] (RGB + encoded trimap), H and W divisible by 32.
    FeaturePyramid<T> operator()(const Var<T>& input, const LabelGrid& trimap, bool training) const;
};

/// Stacks RGB images and the encoded trimap plane into the [N, H, W, 4] network input.
template <class T>
Tensor<T> network_input(const std::vector<ImageRGB>& images, const LabelGrid& trimap);

}  // namespace transmat
