#pragma once

#include <filesystem>

#include "transmat/data.hpp"

namespace transmat::synthetic {

struct SyntheticConfig {
    int64_t count = 8;
    int64_t backgrounds = 4;
    int64_t height = 64;
    int64_t width = 64;
    uint64_t seed = 0;
    /// Width in pixels of the soft alpha transition at shape borders.
    double edge_width = 3.0;

    void validate() const;
};

/// Foreground, alpha and background of sample `index`; a pure function of (cfg, index).
/// Alpha has an opaque or translucent body, a soft border and exact 0 far away.
AlphaMatte make_alpha(const SyntheticConfig& cfg, int64_t index);
ImageRGB make_foreground(const SyntheticConfig& cfg, int64_t index);
ImageRGB make_background(const SyntheticConfig& cfg, int64_t index);

/// Full in-memory sample: image = composite(fg, bg, alpha), trimap from the
/// alpha with radius `trimap_radius`.
MattingSample make_sample(const SyntheticConfig& cfg, int64_t index, int trimap_radius = 3);

/// Writes root/fg, root/alpha (16-bit) and root/bg PNGs and returns the manifest.
data::DatasetManifest write_dataset(const std::filesystem::path& root, const SyntheticConfig& cfg);

}  // namespace transmat::synthetic
