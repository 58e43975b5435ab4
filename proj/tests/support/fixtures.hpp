#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "transmat/rng.hpp"
#include "transmat/tensor.hpp"
#include "transmat/types.hpp"

namespace fixture {

template <class T = double>
transmat::Tensor<T> uniform(transmat::Shape shape, transmat::Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    transmat::Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = T(d(rng));
    return t;
}

inline transmat::AlphaMatte random_alpha(int64_t h, int64_t w, transmat::Rng& rng) {
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    transmat::AlphaMatte a(h, w);
    for (auto& v : a.storage()) v = d(rng);
    return a;
}

/// Blobby alpha with exact 0 and 1 regions and a soft band, so trimaps have all three labels.
inline transmat::AlphaMatte blob_alpha(int64_t h, int64_t w, transmat::Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double cy = h * (0.3 + 0.4 * u(rng)), cx = w * (0.3 + 0.4 * u(rng));
    const double r = std::min(h, w) * (0.15 + 0.2 * u(rng)), soft = 1.0 + 4.0 * u(rng);
    const double noise = u(rng) < 0.5 ? 0.0 : 0.3;
    transmat::AlphaMatte a(h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double d = std::hypot(y - cy, x - cx) - r;
            double v = std::clamp(0.5 - d / soft, 0.0, 1.0);
            if (v > 0 && v < 1 && noise > 0) v = std::clamp(v + noise * (u(rng) - 0.5), 0.0, 1.0);
            a(y, x) = float(v);
        }
    return a;
}

inline transmat::ImageRGB random_image(int64_t h, int64_t w, transmat::Rng& rng) {
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    transmat::ImageRGB im(h, w);
    for (auto& v : im.storage()) v = d(rng);
    return im;
}

}  // namespace fixture
