#include "transmat/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

#include "transmat/ops.hpp"

namespace transmat::loss {

namespace {

constexpr std::array<double, 5> kBinomial{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

template <class T>
T sign(T v) {
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

int64_t reflect101(int64_t i, int64_t n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

void require_plane(const Shape& s, const char* what) {
    if (s.size() != 4 || s[3] != 1) throw ShapeError(std::string(what) + " must be [N, H, W, 1], got " + shape_str(s));
}

template <class T>
int64_t region_count(const Tensor<T>& r) {
    int64_t n = 0;
    for (auto v : r.storage()) n += v != T(0) ? 1 : 0;
    return n;
}

// Stack of single-channel planes, [N, H, W], in double precision.
struct Planes {
    int64_t n = 0, h = 0, w = 0;
    std::vector<double> v;

    Planes() = default;
    Planes(int64_t n_, int64_t h_, int64_t w_) : n(n_), h(h_), w(w_), v(static_cast<size_t>(n_ * h_ * w_), 0.0) {}
    double& at(int64_t b, int64_t y, int64_t x) { return v[static_cast<size_t>((b * h + y) * w + x)]; }
    double at(int64_t b, int64_t y, int64_t x) const { return v[static_cast<size_t>((b * h + y) * w + x)]; }
};

// Separable 5x5 binomial blur with reflect-101 borders, scaled by `gain`.
Planes blur(const Planes& in, double gain) {
    Planes tmp(in.n, in.h, in.w), out(in.n, in.h, in.w);
    for (int64_t b = 0; b < in.n; ++b)
        for (int64_t y = 0; y < in.h; ++y)
            for (int64_t x = 0; x < in.w; ++x) {
                double s = 0;
                for (int a = 0; a < 5; ++a) s += kBinomial[a] * in.at(b, y, reflect101(x + a - 2, in.w));
                tmp.at(b, y, x) = s;
            }
    for (int64_t b = 0; b < in.n; ++b)
        for (int64_t y = 0; y < in.h; ++y)
            for (int64_t x = 0; x < in.w; ++x) {
                double s = 0;
                for (int a = 0; a < 5; ++a) s += kBinomial[a] * tmp.at(b, reflect101(y + a - 2, in.h), x);
                out.at(b, y, x) = gain * s;
            }
    return out;
}

Planes blur_adjoint(const Planes& g, double gain) {
    Planes tmp(g.n, g.h, g.w), out(g.n, g.h, g.w);
    for (int64_t b = 0; b < g.n; ++b)
        for (int64_t y = 0; y < g.h; ++y)
            for (int64_t x = 0; x < g.w; ++x)
                for (int a = 0; a < 5; ++a) tmp.at(b, reflect101(y + a - 2, g.h), x) += gain * kBinomial[a] * g.at(b, y, x);
    for (int64_t b = 0; b < g.n; ++b)
        for (int64_t y = 0; y < g.h; ++y)
            for (int64_t x = 0; x < g.w; ++x)
                for (int a = 0; a < 5; ++a) out.at(b, y, reflect101(x + a - 2, g.w)) += kBinomial[a] * tmp.at(b, y, x);
    return out;
}

Planes downsample(const Planes& in) {
    Planes out(in.n, (in.h + 1) / 2, (in.w + 1) / 2);
    for (int64_t b = 0; b < in.n; ++b)
        for (int64_t y = 0; y < out.h; ++y)
            for (int64_t x = 0; x < out.w; ++x) out.at(b, y, x) = in.at(b, 2 * y, 2 * x);
    return out;
}

Planes downsample_adjoint(const Planes& g, int64_t h, int64_t w) {
    Planes out(g.n, h, w);
    for (int64_t b = 0; b < g.n; ++b)
        for (int64_t y = 0; y < g.h; ++y)
            for (int64_t x = 0; x < g.w; ++x) out.at(b, 2 * y, 2 * x) = g.at(b, y, x);
    return out;
}

// Zero insertion to twice the size, 4x blur, crop to h x w.
Planes upsample(const Planes& in, int64_t h, int64_t w) {
    Planes z(in.n, 2 * in.h, 2 * in.w);
    for (int64_t b = 0; b < in.n; ++b)
        for (int64_t y = 0; y < in.h; ++y)
            for (int64_t x = 0; x < in.w; ++x) z.at(b, 2 * y, 2 * x) = in.at(b, y, x);
    const Planes f = blur(z, 4.0);
    Planes out(in.n, h, w);
    for (int64_t b = 0; b < in.n; ++b)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) out.at(b, y, x) = f.at(b, y, x);
    return out;
}

Planes upsample_adjoint(const Planes& g, int64_t small_h, int64_t small_w) {
    Planes z(g.n, 2 * small_h, 2 * small_w);
    for (int64_t b = 0; b < g.n; ++b)
        for (int64_t y = 0; y < g.h; ++y)
            for (int64_t x = 0; x < g.w; ++x) z.at(b, y, x) = g.at(b, y, x);
    const Planes f = blur_adjoint(z, 4.0);
    Planes out(g.n, small_h, small_w);
    for (int64_t b = 0; b < g.n; ++b)
        for (int64_t y = 0; y < small_h; ++y)
            for (int64_t x = 0; x < small_w; ++x) out.at(b, y, x) = f.at(b, 2 * y, 2 * x);
    return out;
}

std::vector<Planes> build_pyramid(const Planes& base, int levels) {
    std::vector<Planes> pyr;
    Planes cur = base;
    for (int k = 0; k + 1 < levels; ++k) {
        Planes down = downsample(blur(cur, 1.0));
        Planes band = cur;
        const Planes up = upsample(down, cur.h, cur.w);
        for (size_t i = 0; i < band.v.size(); ++i) band.v[i] -= up.v[i];
        pyr.push_back(std::move(band));
        cur = std::move(down);
    }
    pyr.push_back(std::move(cur));
    return pyr;
}

template <class T>
Planes to_planes(const Tensor<T>& t) {
    Planes p(t.dim(0), t.dim(1), t.dim(2));
    for (size_t i = 0; i < p.v.size(); ++i) p.v[i] = static_cast<double>(t[static_cast<int64_t>(i)]);
    return p;
}

}  // namespace

void LossWeights::validate() const {
    if (alpha < 0 || comp < 0 || lap < 0) throw ConfigError("loss weights must be non-negative");
}

template <class T>
Targets<T> Targets<T>::from_samples(const std::vector<MattingSample>& samples) {
    if (samples.empty()) throw DataError("no samples for loss targets");
    const int64_t n = static_cast<int64_t>(samples.size());
    const int64_t h = samples[0].height(), w = samples[0].width();
    Targets t{Tensor<T>({n, h, w, 1}), Tensor<T>({n, h, w, 3}), Tensor<T>({n, h, w, 3}), Tensor<T>({n, h, w, 3}),
              Tensor<T>({n, h, w, 1})};
    const int64_t hw = h * w;
    for (int64_t b = 0; b < n; ++b) {
        const auto& s = samples[static_cast<size_t>(b)];
        if (s.height() != h || s.width() != w) throw ShapeError("samples in a batch differ in size");
        if (!s.gt_foreground.same_shape(s.image) || !s.gt_background.same_shape(s.image)) {
            throw DataError("sample " + s.id + " lacks ground-truth foreground/background planes");
        }
        for (int64_t p = 0; p < hw; ++p) {
            t.alpha[b * hw + p] = static_cast<T>(s.gt_alpha.storage()[static_cast<size_t>(p)]);
            t.region[b * hw + p] = s.trimap.storage()[static_cast<size_t>(p)] == TrimapLabel::UNK ? T(1) : T(0);
            for (int c = 0; c < 3; ++c) {
                const auto i = static_cast<size_t>(p * 3 + c);
                t.foreground[(b * hw + p) * 3 + c] = static_cast<T>(s.gt_foreground.storage()[i]);
                t.background[(b * hw + p) * 3 + c] = static_cast<T>(s.gt_background.storage()[i]);
                t.image[(b * hw + p) * 3 + c] = static_cast<T>(s.image.storage()[i]);
            }
        }
    }
    return t;
}

template <class T>
Var<T> alpha_loss(const Var<T>& pred, const Tensor<T>& gt, const Tensor<T>& region) {
    require_plane(pred.shape(), "alpha_loss prediction");
    if (gt.shape() != pred.shape() || region.shape() != pred.shape()) throw ShapeError("alpha_loss: shape mismatch");
    const int64_t count = region_count(region);
    if (count == 0) throw NoUnknownRegionError("alpha_loss: empty region");
    double s = 0;
    const T* p = pred.value().data();
    for (int64_t i = 0; i < gt.size(); ++i)
        if (region[i] != T(0)) s += std::abs(static_cast<double>(p[i]) - static_cast<double>(gt[i]));
    Tensor<T> out({1}, static_cast<T>(s / static_cast<double>(count)));
    auto g_t = std::make_shared<Tensor<T>>(gt);
    auto r_t = std::make_shared<Tensor<T>>(region);
    return make_result<T>(std::move(out), {pred}, [g_t, r_t, count](Node<T>& self) {
        const T up = self.grad[0] / static_cast<T>(count);
        T* g = self.parents[0]->grad_buffer().data();
        const T* p = self.parents[0]->value.data();
        for (int64_t i = 0; i < g_t->size(); ++i)
            if ((*r_t)[i] != T(0)) g[i] += up * sign(p[i] - (*g_t)[i]);
    });
}

template <class T>
Var<T> composition_loss(const Var<T>& pred, const Tensor<T>& fg, const Tensor<T>& bg, const Tensor<T>& image,
                        const Tensor<T>& region) {
    require_plane(pred.shape(), "composition_loss prediction");
    if (region.shape() != pred.shape()) throw ShapeError("composition_loss: region shape mismatch");
    const Shape rgb{pred.dim(0), pred.dim(1), pred.dim(2), 3};
    if (fg.empty() || bg.empty()) throw DataError("composition_loss: missing foreground/background planes");
    if (fg.shape() != rgb || bg.shape() != rgb || image.shape() != rgb) {
        throw ShapeError("composition_loss: colour planes must be " + shape_str(rgb));
    }
    const int64_t count = region_count(region);
    if (count == 0) throw NoUnknownRegionError("composition_loss: empty region");
    const T* p = pred.value().data();
    // d(residual)/d(alpha) is F - B per channel; keep the sign-weighted sum for backward.
    auto dir = std::make_shared<Tensor<T>>(pred.shape());
    double s = 0;
    for (int64_t i = 0; i < region.size(); ++i) {
        if (region[i] == T(0)) continue;
        const double a = static_cast<double>(p[i]);
        T acc = T(0);
        for (int c = 0; c < 3; ++c) {
            const int64_t j = i * 3 + c;
            const double f = fg[j], b = bg[j];
            const double r = a * f + (1.0 - a) * b - static_cast<double>(image[j]);
            s += std::abs(r);
            acc += sign(static_cast<T>(r)) * static_cast<T>(f - b);
        }
        (*dir)[i] = acc;
    }
    const double denom = 3.0 * static_cast<double>(count);
    Tensor<T> out({1}, static_cast<T>(s / denom));
    return make_result<T>(std::move(out), {pred}, [dir, denom](Node<T>& self) {
        const T up = self.grad[0] / static_cast<T>(denom);
        T* g = self.parents[0]->grad_buffer().data();
        for (int64_t i = 0; i < dir->size(); ++i) g[i] += up * (*dir)[i];
    });
}

int laplacian_levels(int64_t height, int64_t width, int max_levels) {
    const int64_t side = std::min(height, width);
    int lv = 0;
    while ((int64_t{2} << lv) <= side) ++lv;  // floor(log2(side))
    return std::max(1, std::min(max_levels, lv));
}

template <class T>
std::vector<Tensor<T>> laplacian_pyramid(const Tensor<T>& plane, int levels) {
    require_plane(plane.shape(), "laplacian_pyramid input");
    std::vector<Tensor<T>> out;
    for (const auto& p : build_pyramid(to_planes(plane), levels)) {
        Tensor<T> t({p.n, p.h, p.w, 1});
        for (size_t i = 0; i < p.v.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<T>(p.v[i]);
        out.push_back(std::move(t));
    }
    return out;
}

template <class T>
Var<T> laplacian_loss(const Var<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask, int max_levels) {
    require_plane(pred.shape(), "laplacian_loss prediction");
    if (gt.shape() != pred.shape()) throw ShapeError("laplacian_loss: shape mismatch");
    if (!mask.empty() && mask.shape() != pred.shape()) throw ShapeError("laplacian_loss: mask shape mismatch");
    const int levels = laplacian_levels(pred.dim(1), pred.dim(2), max_levels);

    // The pyramid is linear, so Lap(p*m) - Lap(g*m) = Lap((p - g)*m).
    Planes diff = to_planes(pred.value());
    for (size_t i = 0; i < diff.v.size(); ++i) {
        const auto j = static_cast<int64_t>(i);
        diff.v[i] -= static_cast<double>(gt[j]);
        if (!mask.empty()) diff.v[i] *= static_cast<double>(mask[j]);
    }
    auto pyr = std::make_shared<std::vector<Planes>>(build_pyramid(diff, levels));
    double total = 0;
    for (int k = 0; k < levels; ++k) {
        const auto& lvl = (*pyr)[static_cast<size_t>(k)];
        double s = 0;
        for (double v : lvl.v) s += std::abs(v);
        total += std::ldexp(1.0, k) * s / static_cast<double>(lvl.v.size());
    }
    auto m = std::make_shared<Tensor<T>>(mask);
    Tensor<T> out({1}, static_cast<T>(total));
    return make_result<T>(std::move(out), {pred}, [pyr, m, levels](Node<T>& self) {
        const double up = static_cast<double>(self.grad[0]);
        auto band_grad = [&](int k) {
            Planes g = (*pyr)[static_cast<size_t>(k)];
            const double wk = up * std::ldexp(1.0, k) / static_cast<double>(g.v.size());
            for (double& v : g.v) v = wk * (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0));
            return g;
        };
        Planes g_cur = band_grad(levels - 1);
        for (int k = levels - 2; k >= 0; --k) {
            const Planes gb = band_grad(k);
            const Planes u = upsample_adjoint(gb, g_cur.h, g_cur.w);
            for (size_t i = 0; i < g_cur.v.size(); ++i) g_cur.v[i] -= u.v[i];
            Planes back = blur_adjoint(downsample_adjoint(g_cur, gb.h, gb.w), 1.0);
            for (size_t i = 0; i < back.v.size(); ++i) back.v[i] += gb.v[i];
            g_cur = std::move(back);
        }
        T* g = self.parents[0]->grad_buffer().data();
        for (size_t i = 0; i < g_cur.v.size(); ++i) {
            const auto j = static_cast<int64_t>(i);
            const double mv = m->empty() ? 1.0 : static_cast<double>((*m)[j]);
            g[j] += static_cast<T>(g_cur.v[i] * mv);
        }
    });
}

double total_loss(double l_alpha, double l_comp, double l_lap, const LossWeights& w) {
    return w.alpha * l_alpha + w.comp * l_comp + w.lap * l_lap;
}

template <class T>
LossTerms<T> compute(const Var<T>& pred, const Targets<T>& t, const LossConfig& cfg) {
    cfg.weights.validate();
    LossTerms<T> out;
    out.alpha = alpha_loss(pred, t.alpha, t.region);
    out.comp = composition_loss(pred, t.foreground, t.background, t.image, t.region);
    out.lap = laplacian_loss(pred, t.alpha, cfg.lap_mask_unknown ? t.region : Tensor<T>(), cfg.lap_levels);
    out.total = ops::weighted_sum<T>(
        {out.alpha, out.comp, out.lap},
        {static_cast<T>(cfg.weights.alpha), static_cast<T>(cfg.weights.comp), static_cast<T>(cfg.weights.lap)});
    return out;
}

namespace {

Tensor<double> plane_tensor(const AlphaMatte& a) {
    Tensor<double> t({1, a.height(), a.width(), 1});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = a.storage()[static_cast<size_t>(i)];
    return t;
}

Tensor<double> unknown_tensor(const Trimap& tri) {
    Tensor<double> t({1, tri.height(), tri.width(), 1});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = tri.storage()[static_cast<size_t>(i)] == TrimapLabel::UNK ? 1.0 : 0.0;
    return t;
}

}  // namespace

double alpha_loss(const AlphaMatte& pred, const AlphaMatte& gt, const Trimap& trimap) {
    return alpha_loss(Var<double>::constant(plane_tensor(pred)), plane_tensor(gt), unknown_tensor(trimap)).value()[0];
}

double composition_loss(const AlphaMatte& pred, const MattingSample& sample) {
    auto t = Targets<double>::from_samples({sample});
    return composition_loss(Var<double>::constant(plane_tensor(pred)), t.foreground, t.background, t.image, t.region)
        .value()[0];
}

double laplacian_loss(const AlphaMatte& pred, const AlphaMatte& gt, const Trimap& trimap, bool mask_unknown) {
    return laplacian_loss(Var<double>::constant(plane_tensor(pred)), plane_tensor(gt),
                          mask_unknown ? unknown_tensor(trimap) : Tensor<double>())
        .value()[0];
}

#define TRANSMAT_INSTANTIATE_LOSS(T)                                                                          \
    template struct Targets<T>;                                                                               \
    template Var<T> alpha_loss<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&);                         \
    template Var<T> composition_loss<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        const Tensor<T>&);                                                    \
    template Var<T> laplacian_loss<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&, int);                \
    template std::vector<Tensor<T>> laplacian_pyramid<T>(const Tensor<T>&, int);                              \
    template LossTerms<T> compute<T>(const Var<T>&, const Targets<T>&, const LossConfig&);

TRANSMAT_INSTANTIATE_LOSS(float)
TRANSMAT_INSTANTIATE_LOSS(double)

}  // namespace transmat::loss
