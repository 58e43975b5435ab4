#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "transmat/rng.hpp"
#include "transmat/types.hpp"

namespace transmat::data {

/// out = alpha * fg + (1 - alpha) * bg per pixel and channel.
ImageRGB composite(const ImageRGB& fg, const ImageRGB& bg, const AlphaMatte& alpha);

struct TrimapThresholds {
    double fg = 1.0 - 1e-6;
    double bg = 1e-6;
};

/// Binary erosion with a (2r+1) x (2r+1) square and replicate borders.
std::vector<uint8_t> erode_square(const std::vector<uint8_t>& mask, int64_t height, int64_t width, int radius);

/// FG = erode(alpha >= fg threshold, erode_radius); BG = erode(alpha <= bg threshold,
/// dilate_radius); everything else UNK.
Trimap generate_trimap(const AlphaMatte& alpha, int erode_radius, int dilate_radius,
                       const TrimapThresholds& thresholds = {});

struct AugmentationConfig {
    int crop_size = 64;
    int trimap_kernel_min = 1;
    int trimap_kernel_max = 30;
    double flip_probability = 0.5;
    double scale_min = 0.8;
    double scale_max = 1.25;
    double rotation_range = 15.0;  // degrees, symmetric
    double shear_range = 10.0;     // degrees, symmetric
    uint64_t seed = 0;
    TrimapThresholds thresholds;

    /// Throws ConfigError naming the first violated invariant.
    void validate(int downsampling_factor) const;
};

/// One draw of augmentation parameters; applying it is deterministic.
struct AugmentParams {
    bool flip = false;
    double angle_deg = 0.0;
    double scale = 1.0;
    double shear_deg = 0.0;
    int erode_radius = 1;
    int dilate_radius = 1;

    bool geometric_identity() const { return angle_deg == 0.0 && scale == 1.0 && shear_deg == 0.0; }
};

AugmentParams draw_augment_params(const AugmentationConfig& cfg, Rng& rng);

/// Flips, then warps all planes about the image center with bilinear sampling;
/// the image is recomposited and the trimap regenerated from the warped alpha
/// whenever the geometry changed.
MattingSample apply_augmentation(const MattingSample& sample, const AugmentParams& params,
                                 const TrimapThresholds& thresholds = {});

MattingSample augment(const MattingSample& sample, const AugmentationConfig& cfg, Rng& rng);

/// Reflect-pads (101 style) at the bottom/right so both sides reach the minimum.
MattingSample reflect_pad(const MattingSample& sample, int64_t min_height, int64_t min_width);

/// Reflect-101 padding of single planes to exactly height x width (at least the input size).
ImageRGB reflect_pad(const ImageRGB& image, int64_t height, int64_t width);
Trimap reflect_pad(const Trimap& trimap, int64_t height, int64_t width);

MattingSample crop(const MattingSample& sample, int64_t y0, int64_t x0, int64_t height, int64_t width);

/// Crop window centered on a uniformly drawn UNK pixel, clipped to the bounds.
/// Throws NoUnknownRegionError when the trimap has no UNK pixel.
MattingSample unknown_centered_crop(const MattingSample& sample, int crop_size, Rng& rng);

ImageRGB resize_bilinear(const ImageRGB& image, int64_t height, int64_t width);

struct DatasetEntry {
    std::string name;
    std::filesystem::path foreground;
    std::filesystem::path alpha;
    std::optional<std::filesystem::path> trimap;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<DatasetEntry> entries;
    std::vector<std::filesystem::path> backgrounds;
    std::vector<std::string> warnings;
};

/// Scans root/{fg,alpha,bg}/ (and optional root/trimap/) for PNG files.
DatasetManifest load_manifest(const std::filesystem::path& root, bool require_backgrounds = true);

/// Plain-text index, one record per line.
void write_manifest_index(const DatasetManifest& manifest, const std::filesystem::path& file);
DatasetManifest read_manifest_index(const std::filesystem::path& file);

enum class Split { train, eval };

/// Deterministic source of samples. Sample i is a pure function of
/// (manifest, cfg, split, i); `batch` may use several worker threads without
/// changing the result.
class SampleStream {
public:
    SampleStream(DatasetManifest manifest, AugmentationConfig cfg, Split split, int workers = 1);
    ~SampleStream();
    SampleStream(SampleStream&&) noexcept;
    SampleStream& operator=(SampleStream&&) noexcept;

    MattingSample at(int64_t index) const;
    std::vector<MattingSample> batch(int64_t first, int64_t count) const;
    MattingSample next();

    /// Number of distinct samples for the eval split; -1 (unbounded) for train.
    int64_t size() const;
    Split split() const { return split_; }
    const DatasetManifest& manifest() const;

private:
    struct Cache;
    MattingSample eval_sample(int64_t index) const;
    MattingSample train_sample(int64_t index) const;

    AugmentationConfig cfg_;
    Split split_;
    int workers_;
    int64_t cursor_ = 0;
    std::unique_ptr<Cache> cache_;
};

/// Deterministic trimap radius used for eval samples of entry `index`.
int eval_trimap_radius(const AugmentationConfig& cfg, int64_t index);

}  // namespace transmat::data
