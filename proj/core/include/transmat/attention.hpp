#pragma once

#include <cstdint>
#include <vector>

#include "transmat/autograd.hpp"

namespace transmat::attn {

/// How an H x W grid is tiled into attention windows.
///
/// A grid that fits inside one M x M window is attended as a single H x W window
/// and never shifted. Larger grids are zero-padded up to multiples of M; padded
/// positions are excluded from every softmax. A shifted layout cyclically rolls
/// the padded grid by M/2 and masks attention between regions that were not
/// adjacent before the roll.
struct WindowGeometry {
    int64_t height = 0;
    int64_t width = 0;
    int64_t window = 0;  // configured M
    int64_t win_h = 0;
    int64_t win_w = 0;
    int64_t padded_h = 0;
    int64_t padded_w = 0;
    int64_t shift = 0;

    static WindowGeometry make(int64_t height, int64_t width, int64_t window, bool shifted);

    int64_t windows_y() const { return padded_h / win_h; }
    int64_t windows_x() const { return padded_w / win_w; }
    int64_t num_windows() const { return windows_y() * windows_x(); }
    int64_t tokens() const { return win_h * win_w; }
};

/// Per (window, token) source pixel index y * W + x, or -1 for padding, plus the
/// shift-region id used for masking.
struct WindowLayout {
    WindowGeometry geom;
    std::vector<int64_t> source;
    std::vector<uint8_t> region;

    explicit WindowLayout(const WindowGeometry& g);
    int64_t at(int64_t window, int64_t token) const { return source[static_cast<size_t>(window * geom.tokens() + token)]; }
    bool may_attend(int64_t window, int64_t query, int64_t key) const;
};

/// Windows of a feature map: [N * num_windows, tokens, C] plus what is needed
/// to invert the partition.
template <class T>
struct WindowBatch {
    Tensor<T> windows;
    int64_t batch = 0;
    WindowGeometry geom;
};

/// Non-shifted partition of an [N, H, W, C] map; grids not divisible by M are
/// zero-padded.
template <class T>
WindowBatch<T> window_partition(const Tensor<T>& features, int64_t window);

/// Exact inverse of window_partition; padding is cropped away.
template <class T>
Tensor<T> window_reverse(const WindowBatch<T>& batch);

/// softmax(Q K^T / sqrt(d)) V for one window and head; Q, K, V are [L, d].
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v);

/// softmax((Q + tokens) K^T / sqrt(d)) V; `tokens` holds each position's tri-token, [L, d].
template <class T>
Var<T> tri_token_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& tokens);

/// Attention weights of attention(q, k, v), [L, L]. Not differentiable.
template <class T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k);

/// Multi-head window attention over [N, H, W, C] query/key/value maps.
/// Channels are split into `heads` contiguous groups of C / heads. `rel_bias`
/// is an optional [(2M-1)^2, heads] relative position table.
template <class T>
Var<T> window_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, const WindowGeometry& geom,
                        const Var<T>& rel_bias = Var<T>());

}  // namespace transmat::attn
