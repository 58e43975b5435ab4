#pragma once

#include "transmat/network.hpp"

namespace transmat {

struct InferenceOptions {
    /// Images with a side above this are processed in overlapping tiles.
    int64_t max_side = 1024;
    int64_t tile = 512;
    int64_t overlap = 64;
    /// Force FG pixels to 1 and BG pixels to 0 in the output.
    bool trust_trimap = false;

    void validate() const;
};

/// Eval-mode prediction at the input resolution. Inputs are reflect-padded to a
/// multiple of 32; large inputs are tiled with linear blending across overlaps.
AlphaMatte predict(const Network<float>& net, const ImageRGB& image, const Trimap& trimap,
                   const InferenceOptions& opts = {});

/// Tile origins along one axis covering [0, length) with the given tile and overlap.
std::vector<int64_t> tile_origins(int64_t length, int64_t tile, int64_t overlap);

}  // namespace transmat
