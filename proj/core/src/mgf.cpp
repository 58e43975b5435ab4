#include "transmat/mgf.hpp"

#include <algorithm>
#include <string>

namespace transmat {

template <class T>
Tensor<T> and_pool2(const Tensor<T>& mask) {
    if (mask.rank() != 4 || mask.dim(3) != 1) throw ShapeError("and_pool2 expects [N, H, W, 1]");
    const int64_t n = mask.dim(0), h = mask.dim(1), w = mask.dim(2);
    const int64_t ho = (h + 1) / 2, wo = (w + 1) / 2;
    Tensor<T> out({n, ho, wo, 1});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t y = 0; y < ho; ++y)
            for (int64_t x = 0; x < wo; ++x) {
                T v = T(1);
                for (int64_t dy = 0; dy < 2 && 2 * y + dy < h; ++dy)
                    for (int64_t dx = 0; dx < 2 && 2 * x + dx < w; ++dx)
                        v = std::min(v, mask.at(b, 2 * y + dy, 2 * x + dx, 0));
                out.at(b, y, x, 0) = v;
            }
    return out;
}

template <class T>
MgfFuse<T>::MgfFuse(const nn::Scope<T>& s, int64_t c_prev, int64_t c_n, int64_t c_next, const MgfConfig& c,
                    bool zero_init_fuse)
    : cfg(c) {
    if (cfg.squeeze_ratio < 1) throw ConfigError("mgf squeeze_ratio must be at least 1");
    if (cfg.local) align = nn::Conv2d<T>(s.sub("align"), c_prev + c_n, c_n, 1, 1, true);
    if (cfg.global) {
        const int64_t hidden = std::max<int64_t>(1, c_next / cfg.squeeze_ratio);
        squeeze = nn::Linear<T>(s.sub("squeeze"), c_next, hidden);
        fc_gamma = nn::Linear<T>(s.sub("fc_gamma"), hidden, c_n);
        fc_beta = nn::Linear<T>(s.sub("fc_beta"), hidden, c_n);
    }
    fuse = nn::Conv2d<T>(s.sub("fuse"), c_n, c_n, 3, 1, true);
    if (zero_init_fuse) fuse.weight.mutable_value().fill(T(0));
}

template <class T>
Var<T> MgfFuse<T>::operator()(const Var<T>& t_prev, const Var<T>& t_n, const Var<T>& t_next,
                              const Tensor<T>& nonbg) const {
    const int64_t hn = t_n.dim(1), wn = t_n.dim(2);
    if ((t_prev.dim(1) + 1) / 2 != hn || (t_prev.dim(2) + 1) / 2 != wn) {
        throw ShapeError("mgf_fuse: T_prev " + shape_str(t_prev.shape()) + " is not at twice the resolution of T_n " +
                         shape_str(t_n.shape()));
    }
    if ((hn + 1) / 2 != t_next.dim(1) || (wn + 1) / 2 != t_next.dim(2)) {
        throw ShapeError("mgf_fuse: T_next " + shape_str(t_next.shape()) + " is not at half the resolution of T_n " +
                         shape_str(t_n.shape()));
    }
    if (nonbg.shape() != Shape{t_prev.dim(0), t_prev.dim(1), t_prev.dim(2), 1}) {
        throw ShapeError("mgf_fuse: non-background mask must lie on T_prev's grid");
    }
    Var<T> fused = t_n;
    if (cfg.local) {
        const Var<T> pooled = ops::mul_mask(ops::avg_pool2(t_prev), and_pool2(nonbg));
        fused = align(ops::concat_channels<T>({pooled, t_n}));
    }
    if (cfg.global) {
        const Var<T> z = ops::relu(squeeze(ops::global_avg_pool(t_next)));
        fused = ops::channel_affine(fused, ops::sigmoid(fc_gamma(z)), fc_beta(z));
    }
    return ops::add(fuse(fused), t_n);
}

template <class T>
Decoder<T>::Decoder(const nn::Scope<T>& s, const std::vector<int64_t>& c, int64_t input_channels,
                    const DecoderConfig& dc)
    : cfg(dc) {
    const auto levels = static_cast<int64_t>(c.size());
    if (levels < 2) throw ConfigError("decoder needs at least two pyramid levels");
    if (static_cast<int64_t>(cfg.widths.size()) != levels) {
        throw ConfigError("decoder needs " + std::to_string(levels) + " widths, got " +
                          std::to_string(cfg.widths.size()));
    }
    if (cfg.use_mgf) {
        for (int64_t j = 1; j + 1 < levels; ++j) {
            const auto u = static_cast<size_t>(j);
            fusers.emplace_back(s.sub("mgf" + std::to_string(j)), c[u - 1], c[u], c[u + 1], cfg.mgf);
        }
    }
    int64_t in = c.back();
    for (int64_t i = 0; i < levels; ++i) {
        const bool full_res = i == levels - 1;
        const int64_t skip = full_res ? input_channels : c[static_cast<size_t>(levels - 2 - i)];
        const int64_t width = cfg.widths[static_cast<size_t>(i)];
        const auto sc = s.sub("up" + std::to_string(i));
        convs.emplace_back(sc.sub("conv"), in + skip, width, 3, 1, false);
        norms.emplace_back(sc.sub("bn"), width);
        if (!full_res) blocks.emplace_back(sc.sub("block"), width, width, 1);
        in = width;
    }
    head = nn::Conv2d<T>(s.sub("head"), in, 1, 3, 1, true);
}

template <class T>
Var<T> Decoder<T>::operator()(const FeaturePyramid<T>& pyramid, const Var<T>& input, const LabelGrid& trimap,
                              bool training) const {
    const auto& lv = pyramid.levels;
    const auto levels = static_cast<int64_t>(lv.size());
    if (levels != static_cast<int64_t>(convs.size())) throw ShapeError("decoder: pyramid depth mismatch");
    Var<T> x = lv.back();
    for (int64_t i = 0; i < levels; ++i) {
        const bool full_res = i == levels - 1;
        Var<T> skip;
        if (full_res) {
            skip = input;
        } else {
            const int64_t j = levels - 2 - i;
            const auto u = static_cast<size_t>(j);
            if (cfg.use_mgf && j >= 1) {
                const auto& prev = lv[u - 1];
                const auto mask = trimap.resample_nearest(prev.dim(1), prev.dim(2)).template nonbackground<T>();
                skip = fusers[u - 1](prev, lv[u], lv[u + 1], mask);
            } else {
                skip = lv[u];
            }
        }
        x = ops::resize_bilinear(x, skip.dim(1), skip.dim(2));
        x = ops::concat_channels<T>({x, skip});
        const auto ui = static_cast<size_t>(i);
        x = ops::relu(norms[ui](convs[ui](x), training));
        if (!full_res) x = blocks[ui](x, training);
    }
    return ops::sigmoid(head(x));
}

template Tensor<float> and_pool2<float>(const Tensor<float>&);
template Tensor<double> and_pool2<double>(const Tensor<double>&);
template struct MgfFuse<float>;
template struct MgfFuse<double>;
template struct Decoder<float>;
template struct Decoder<double>;

}  // namespace transmat
