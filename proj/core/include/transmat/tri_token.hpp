#pragma once

#include <vector>

#include "transmat/autograd.hpp"
#include "transmat/nn.hpp"
#include "transmat/types.hpp"

namespace transmat {

/// Trimap labels for a batch, [N, H, W] in TrimapLabel order (FG=0, BG=1, UNK=2).
struct LabelGrid {
    int64_t batch = 0;
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> labels;

    static LabelGrid from_trimaps(const std::vector<Trimap>& trimaps);
    static LabelGrid from_trimap(const Trimap& trimap) { return from_trimaps({trimap}); }

    uint8_t at(int64_t n, int64_t y, int64_t x) const {
        return labels[static_cast<size_t>((n * height + y) * width + x)];
    }

    /// Nearest-neighbor resampling on labels, sampling source pixel
    /// floor((i + 0.5) * H / h). The target must not be larger than the grid.
    LabelGrid resample_nearest(int64_t target_h, int64_t target_w) const;

    /// Samples [first, first + count) as a new grid.
    LabelGrid slice(int64_t first, int64_t count) const;

    /// 1 where the label is FG or UNK, [N, H, W, 1].
    template <class T>
    Tensor<T> nonbackground() const;

    /// Trimap encoded as one input plane, [N, H, W, 1]: FG 1, BG 0, UNK 0.5.
    template <class T>
    Tensor<T> encoded_plane() const;
};

/// The three learnable tokens of one stage, [3, C].
template <class T>
struct TriTokenSet {
    Var<T> tokens;

    int64_t dim() const { return tokens.dim(1); }
    const T* token(TrimapLabel label) const { return tokens.value().data() + static_cast<int>(label) * dim(); }
};

/// Independent N(0, 0.02^2) draws per token; redrawn in the (measure-zero) case of a tie.
template <class T>
TriTokenSet<T> init_tokens(int64_t dim, Rng& rng);

/// Registers a freshly initialised set as parameter `<scope>.tokens`.
template <class T>
TriTokenSet<T> init_tokens(const nn::Scope<T>& scope, int64_t dim);

/// Tri-token map [N, h, w, C]: every position holds the token of its
/// nearest-neighbor trimap label. Gradients sum per label into the tokens.
template <class T>
Var<T> expand(const LabelGrid& trimap, const TriTokenSet<T>& tokens, int64_t target_h, int64_t target_w);

template <class T>
Var<T> expand(const Trimap& trimap, const TriTokenSet<T>& tokens, int64_t target_h, int64_t target_w) {
    return expand(LabelGrid::from_trimap(trimap), tokens, target_h, target_w);
}

}  // namespace transmat
