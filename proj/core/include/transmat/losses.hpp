#pragma once

#include <vector>

#include "transmat/autograd.hpp"
#include "transmat/types.hpp"

namespace transmat::loss {

struct LossWeights {
    double alpha = 0.4;
    double comp = 1.2;
    double lap = 0.16;

    void validate() const;
};

struct LossConfig {
    LossWeights weights;
    /// Mask both mattes to the UNK region before building the Laplacian pyramid.
    bool lap_mask_unknown = true;
    int lap_levels = 5;
};

/// Per-batch supervision, NHWC. `region` is the {0, 1} UNK mask [N, H, W, 1].
template <class T>
struct Targets {
    Tensor<T> alpha;
    Tensor<T> foreground;
    Tensor<T> background;
    Tensor<T> image;
    Tensor<T> region;

    /// Throws DataError when a sample lacks ground-truth foreground or background.
    static Targets from_samples(const std::vector<MattingSample>& samples);
};

/// Mean |pred - gt| over region pixels. Throws NoUnknownRegionError for an empty region.
template <class T>
Var<T> alpha_loss(const Var<T>& pred, const Tensor<T>& gt, const Tensor<T>& region);

/// Mean over region pixels and the three channels of |pred*F + (1-pred)*B - I|.
template <class T>
Var<T> composition_loss(const Var<T>& pred, const Tensor<T>& fg, const Tensor<T>& bg, const Tensor<T>& image,
                        const Tensor<T>& region);

/// Number of pyramid levels used for an h x w plane: min(max_levels, floor(log2(min side))), at least 1.
int laplacian_levels(int64_t height, int64_t width, int max_levels = 5);

/// Sum over levels k of 2^(k-1) * mean |Lap_k(pred*m) - Lap_k(gt*m)|, with a
/// 5-tap binomial kernel and reflect borders. Levels 1..L-1 are band-pass,
/// level L the coarse residual. `mask` may be empty (no masking).
template <class T>
Var<T> laplacian_loss(const Var<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask, int max_levels = 5);

/// The individual pyramid levels of a single-channel [N, H, W, 1] plane, for inspection.
template <class T>
std::vector<Tensor<T>> laplacian_pyramid(const Tensor<T>& plane, int levels);

double total_loss(double l_alpha, double l_comp, double l_lap, const LossWeights& w = {});

template <class T>
struct LossTerms {
    Var<T> alpha;
    Var<T> comp;
    Var<T> lap;
    Var<T> total;
};

template <class T>
LossTerms<T> compute(const Var<T>& pred, const Targets<T>& targets, const LossConfig& cfg = {});

/// Double-precision conveniences on single mattes, with the region taken from the trimap.
double alpha_loss(const AlphaMatte& pred, const AlphaMatte& gt, const Trimap& trimap);
double composition_loss(const AlphaMatte& pred, const MattingSample& sample);
double laplacian_loss(const AlphaMatte& pred, const AlphaMatte& gt, const Trimap& trimap, bool mask_unknown = true);

}  // namespace transmat::loss
