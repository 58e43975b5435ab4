#include "transmat/inference.hpp"

#include <algorithm>

#include "transmat/data.hpp"

namespace transmat {

void InferenceOptions::validate() const {
    if (tile < Encoder<float>::kDivisor || tile % Encoder<float>::kDivisor != 0) {
        throw ConfigError("tile size must be a positive multiple of 32");
    }
    if (overlap < 0 || overlap >= tile) throw ConfigError("tile overlap must lie in [0, tile)");
    if (max_side < 1) throw ConfigError("max_side must be positive");
}

std::vector<int64_t> tile_origins(int64_t length, int64_t tile, int64_t overlap) {
    if (length <= tile) return {0};
    std::vector<int64_t> out;
    const int64_t stride = tile - overlap;
    for (int64_t o = 0;; o += stride) {
        if (o + tile >= length) {
            out.push_back(length - tile);
            break;
        }
        out.push_back(o);
    }
    return out;
}

namespace {

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

AlphaMatte predict_whole(const Network<float>& net, const ImageRGB& image, const Trimap& trimap) {
    const int64_t h = image.height(), w = image.width();
    const int64_t ph = round_up(h, Encoder<float>::kDivisor), pw = round_up(w, Encoder<float>::kDivisor);
    const ImageRGB img = data::reflect_pad(image, ph, pw);
    const LabelGrid labels = LabelGrid::from_trimap(data::reflect_pad(trimap, ph, pw));
    const Var<float> alpha = net.forward(network_input<float>({img}, labels), labels, false);
    AlphaMatte out(h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) out(y, x) = alpha.value()[y * pw + x];
    return out;
}

template <class P>
P window(const P& in, int64_t y0, int64_t x0, int64_t h, int64_t w) {
    P out(h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int c = 0; c < P::kChannels; ++c) out(y, x, c) = in(y0 + y, x0 + x, c);
    return out;
}

// Linear ramp over `overlap` pixels on sides shared with a neighboring tile.
double ramp(int64_t i, int64_t len, int64_t overlap, bool ramp_start, bool ramp_end) {
    double v = 1.0;
    if (overlap == 0) return v;
    const double o = static_cast<double>(overlap + 1);
    if (ramp_start) v = std::min(v, static_cast<double>(i + 1) / o);
    if (ramp_end) v = std::min(v, static_cast<double>(len - i) / o);
    return v;
}

}  // namespace

AlphaMatte predict(const Network<float>& net, const ImageRGB& image, const Trimap& trimap,
                   const InferenceOptions& opts) {
    opts.validate();
    if (!image.same_shape(trimap)) throw ShapeError("image and trimap differ in size");
    const int64_t h = image.height(), w = image.width();
    AlphaMatte out;
    if (std::max(h, w) <= opts.max_side) {
        out = predict_whole(net, image, trimap);
    } else {
        const auto ys = tile_origins(h, opts.tile, opts.overlap);
        const auto xs = tile_origins(w, opts.tile, opts.overlap);
        std::vector<double> acc(static_cast<size_t>(h * w), 0.0), weight(static_cast<size_t>(h * w), 0.0);
        for (size_t iy = 0; iy < ys.size(); ++iy)
            for (size_t ix = 0; ix < xs.size(); ++ix) {
                const int64_t th = std::min(opts.tile, h), tw = std::min(opts.tile, w);
                const int64_t y0 = ys[iy], x0 = xs[ix];
                const AlphaMatte a =
                    predict_whole(net, window(image, y0, x0, th, tw), window(trimap, y0, x0, th, tw));
                for (int64_t y = 0; y < th; ++y) {
                    const double wy = ramp(y, th, opts.overlap, iy > 0, iy + 1 < ys.size());
                    for (int64_t x = 0; x < tw; ++x) {
                        const double wx = ramp(x, tw, opts.overlap, ix > 0, ix + 1 < xs.size());
                        const auto i = static_cast<size_t>((y0 + y) * w + x0 + x);
                        acc[i] += wy * wx * a(y, x);
                        weight[i] += wy * wx;
                    }
                }
            }
        out = AlphaMatte(h, w);
        for (size_t i = 0; i < acc.size(); ++i) out.storage()[i] = static_cast<float>(acc[i] / weight[i]);
    }
    if (opts.trust_trimap) {
        for (size_t i = 0; i < out.storage().size(); ++i) {
            if (trimap.storage()[i] == TrimapLabel::FG) out.storage()[i] = 1.0f;
            if (trimap.storage()[i] == TrimapLabel::BG) out.storage()[i] = 0.0f;
        }
    }
    return out;
}

}  // namespace transmat
