#pragma once

#include <vector>

#include "transmat/encoder.hpp"

namespace transmat {

struct MgfConfig {
    int squeeze_ratio = 4;
    bool local = true;   // T_prev branch: pool, mask, concat, align
    bool global = true;  // channel re-weighting from T_next
};

/// 2x2 logical AND of a {0, 1} mask [N, H, W, 1]; odd borders use the cells that exist.
template <class T>
Tensor<T> and_pool2(const Tensor<T>& mask);

/// Fusion of three adjacent pyramid levels into a skip feature shaped like T_n.
template <class T>
struct MgfFuse {
    MgfConfig cfg;
    nn::Conv2d<T> align;  // 1x1, (C_prev + C_n) -> C_n
    nn::Linear<T> squeeze;
    nn::Linear<T> fc_gamma, fc_beta;
    nn::Conv2d<T> fuse;  // 3x3, C_n -> C_n

    MgfFuse() = default;
    /// `zero_init_fuse` zeroes the fusing conv so the output starts equal to T_n.
    MgfFuse(const nn::Scope<T>& s, int64_t c_prev, int64_t c_n, int64_t c_next, const MgfConfig& cfg,
            bool zero_init_fuse = false);

    /// `nonbg` is the non-background mask on T_prev's grid, [N, H_prev, W_prev, 1].
    Var<T> operator()(const Var<T>& t_prev, const Var<T>& t_n, const Var<T>& t_next, const Tensor<T>& nonbg) const;
};

struct DecoderConfig {
    /// One width per decoder level, deep to shallow; the last is the full-resolution level.
    std::vector<int64_t> widths{128, 64, 32, 32, 16, 16};
    bool use_mgf = true;
    MgfConfig mgf;
};

/// UNet-style decoder. With MGF enabled, every skip whose pyramid level has
/// both neighbors is replaced by the fused feature.
template <class T>
struct Decoder {
    DecoderConfig cfg;
    std::vector<MgfFuse<T>> fusers;  // fusers[j - 1] serves pyramid level j
    std::vector<nn::Conv2d<T>> convs;
    std::vector<nn::BatchNorm2d<T>> norms;
    std::vector<nn::BasicBlock<T>> blocks;
    nn::Conv2d<T> head;

    Decoder() = default;
    Decoder(const nn::Scope<T>& s, const std::vector<int64_t>& level_channels, int64_t input_channels,
            const DecoderConfig& cfg);

    /// Alpha [N, H, W, 1] in (0, 1) at the resolution of `input`.
    Var<T> operator()(const FeaturePyramid<T>& pyramid, const Var<T>& input, const LabelGrid& trimap,
                      bool training) const;
};

}  // namespace transmat
