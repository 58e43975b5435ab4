#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "transmat/errors.hpp"

namespace transmat {

/// Categorical trimap labels. The numeric order (FG, BG, UNK) is also the
/// tri-token index order.
enum class TrimapLabel : uint8_t { FG = 0, BG = 1, UNK = 2 };

inline constexpr int kNumTrimapLabels = 3;

const char* label_name(TrimapLabel label);

/// Interleaved H x W x C plane. `Tag` keeps semantically different planes with the
/// same element type apart at compile time.
template <class V, int C, class Tag>
class Plane {
public:
    using value_type = V;
    static constexpr int kChannels = C;

    Plane() = default;
    Plane(int64_t height, int64_t width, V fill = V{})
        : height_(height), width_(width), data_(static_cast<size_t>(height * width * C), fill) {}
    Plane(int64_t height, int64_t width, std::vector<V> data)
        : height_(height), width_(width), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != height * width * C) {
            throw ShapeError("plane data size does not match " + std::to_string(height) + "x" +
                             std::to_string(width) + "x" + std::to_string(C));
        }
    }

    int64_t height() const { return height_; }
    int64_t width() const { return width_; }
    int64_t pixels() const { return height_ * width_; }

    V& operator()(int64_t y, int64_t x, int c = 0) { return data_[index(y, x, c)]; }
    const V& operator()(int64_t y, int64_t x, int c = 0) const { return data_[index(y, x, c)]; }

    std::span<V> data() { return data_; }
    std::span<const V> data() const { return data_; }
    std::vector<V>& storage() { return data_; }
    const std::vector<V>& storage() const { return data_; }

    template <class Other>
    bool same_shape(const Other& other) const {
        return height_ == other.height() && width_ == other.width();
    }

    bool operator==(const Plane&) const = default;

private:
    size_t index(int64_t y, int64_t x, int c) const {
        return static_cast<size_t>((y * width_ + x) * C + c);
    }

    int64_t height_ = 0;
    int64_t width_ = 0;
    std::vector<V> data_;
};

struct RgbTag {};
struct AlphaTag {};
struct TrimapTag {};
struct MaskTag {};
struct Gray8Tag {};

/// RGB intensities normalized to [0, 1].
using ImageRGB = Plane<float, 3, RgbTag>;
/// Opacity in [0, 1].
using AlphaMatte = Plane<float, 1, AlphaTag>;
using Trimap = Plane<TrimapLabel, 1, TrimapTag>;
/// 1 where the trimap is FG or UNK.
using NonBackgroundMask = Plane<uint8_t, 1, MaskTag>;
/// 8-bit single-channel image, the on-disk trimap encoding.
using GrayPlane8 = Plane<uint8_t, 1, Gray8Tag>;

struct MattingSample {
    std::string id;
    ImageRGB image;
    Trimap trimap;
    AlphaMatte gt_alpha;
    ImageRGB gt_foreground;
    ImageRGB gt_background;
    // When set, `image` must equal composite(gt_foreground, gt_background, gt_alpha).
    bool synthesized = true;

    int64_t height() const { return image.height(); }
    int64_t width() const { return image.width(); }
};

inline constexpr double kCompositeTolerance = 1e-6;

/// Returns one human-readable entry per violated invariant; empty when valid.
std::vector<std::string> validate_sample(const MattingSample& sample);

/// BG -> 0, UNK -> 128, FG -> 255.
GrayPlane8 trimap_encode(const Trimap& trimap);
/// Inverse of trimap_encode; throws InvalidTrimapError on any other value.
Trimap trimap_decode(const GrayPlane8& plane);

NonBackgroundMask nonbackground_mask(const Trimap& trimap);

/// Number of pixels carrying `label`.
int64_t count_label(const Trimap& trimap, TrimapLabel label);

}  // namespace transmat
