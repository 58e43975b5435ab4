#include "transmat/tri_token.hpp"

#include <algorithm>

namespace transmat {

LabelGrid LabelGrid::from_trimaps(const std::vector<Trimap>& trimaps) {
    LabelGrid g;
    if (trimaps.empty()) return g;
    g.batch = static_cast<int64_t>(trimaps.size());
    g.height = trimaps[0].height();
    g.width = trimaps[0].width();
    g.labels.reserve(static_cast<size_t>(g.batch * g.height * g.width));
    for (const auto& t : trimaps) {
        if (t.height() != g.height || t.width() != g.width) throw ShapeError("trimaps in a batch differ in size");
        for (const auto label : t.storage()) g.labels.push_back(static_cast<uint8_t>(label));
    }
    return g;
}

LabelGrid LabelGrid::resample_nearest(int64_t target_h, int64_t target_w) const {
    if (target_h > height || target_w > width || target_h < 1 || target_w < 1) {
        throw ShapeError("label grid " + std::to_string(height) + "x" + std::to_string(width) +
                         " cannot be resampled to " + std::to_string(target_h) + "x" + std::to_string(target_w));
    }
    if (target_h == height && target_w == width) return *this;
    LabelGrid out{batch, target_h, target_w, {}};
    out.labels.resize(static_cast<size_t>(batch * target_h * target_w));
    std::vector<int64_t> sx(static_cast<size_t>(target_w));
    for (int64_t x = 0; x < target_w; ++x) sx[static_cast<size_t>(x)] = (2 * x + 1) * width / (2 * target_w);
    for (int64_t n = 0; n < batch; ++n)
        for (int64_t y = 0; y < target_h; ++y) {
            const int64_t syy = (2 * y + 1) * height / (2 * target_h);
            for (int64_t x = 0; x < target_w; ++x)
                out.labels[static_cast<size_t>((n * target_h + y) * target_w + x)] = at(n, syy, sx[static_cast<size_t>(x)]);
        }
    return out;
}

LabelGrid LabelGrid::slice(int64_t first, int64_t count) const {
    const auto plane = static_cast<size_t>(height * width);
    LabelGrid out{count, height, width, {}};
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first * plane),
                      labels.begin() + static_cast<std::ptrdiff_t>((first + count) * plane));
    return out;
}

template <class T>
Tensor<T> LabelGrid::nonbackground() const {
    Tensor<T> out({batch, height, width, 1});
    for (size_t i = 0; i < labels.size(); ++i)
        out[static_cast<int64_t>(i)] = labels[i] == static_cast<uint8_t>(TrimapLabel::BG) ? T(0) : T(1);
    return out;
}

template <class T>
Tensor<T> LabelGrid::encoded_plane() const {
    Tensor<T> out({batch, height, width, 1});
    for (size_t i = 0; i < labels.size(); ++i) {
        switch (static_cast<TrimapLabel>(labels[i])) {
            case TrimapLabel::FG: out[static_cast<int64_t>(i)] = T(1); break;
            case TrimapLabel::BG: out[static_cast<int64_t>(i)] = T(0); break;
            case TrimapLabel::UNK: out[static_cast<int64_t>(i)] = T(0.5); break;
        }
    }
    return out;
}

namespace {

template <class T>
bool distinct_rows(const Tensor<T>& t) {
    const int64_t c = t.dim(1);
    for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b)
            if (std::equal(t.data() + a * c, t.data() + (a + 1) * c, t.data() + b * c)) return false;
    return true;
}

template <class T>
Tensor<T> draw_tokens(int64_t dim, Rng& rng) {
    if (dim < 1) throw ShapeError("tri-token dimension must be at least 1");
    Tensor<T> t = nn::normal<T>({3, dim}, 0.02, rng);
    while (!distinct_rows(t)) t = nn::normal<T>({3, dim}, 0.02, rng);
    return t;
}

}  // namespace

template <class T>
TriTokenSet<T> init_tokens(int64_t dim, Rng& rng) {
    return {Var<T>::leaf(draw_tokens<T>(dim, rng), true)};
}

template <class T>
TriTokenSet<T> init_tokens(const nn::Scope<T>& scope, int64_t dim) {
    return {scope.param("tokens", draw_tokens<T>(dim, *scope.rng))};
}

template <class T>
Var<T> expand(const LabelGrid& trimap, const TriTokenSet<T>& set, int64_t target_h, int64_t target_w) {
    if (set.tokens.value().rank() != 2 || set.tokens.dim(0) != 3) throw ShapeError("tri-token set must be [3, C]");
    auto grid = std::make_shared<LabelGrid>(trimap.resample_nearest(target_h, target_w));
    const int64_t c = set.dim();
    Tensor<T> out({grid->batch, target_h, target_w, c});
    const T* tok = set.tokens.value().data();
    for (size_t i = 0; i < grid->labels.size(); ++i) {
        const T* src = tok + grid->labels[i] * c;
        std::copy(src, src + c, out.data() + static_cast<int64_t>(i) * c);
    }
    return make_result<T>(std::move(out), {set.tokens}, [grid, c](Node<T>& self) {
        T* g = self.parents[0]->grad_buffer().data();
        const T* up = self.grad.data();
        for (size_t i = 0; i < grid->labels.size(); ++i) {
            T* dst = g + grid->labels[i] * c;
            const T* src = up + static_cast<int64_t>(i) * c;
            for (int64_t e = 0; e < c; ++e) dst[e] += src[e];
        }
    });
}

#define TRANSMAT_INSTANTIATE_TRI(T)                                                            \
    template Tensor<T> LabelGrid::nonbackground<T>() const;                                    \
    template Tensor<T> LabelGrid::encoded_plane<T>() const;                                    \
    template TriTokenSet<T> init_tokens<T>(int64_t, Rng&);                                     \
    template TriTokenSet<T> init_tokens<T>(const nn::Scope<T>&, int64_t);                      \
    template Var<T> expand<T>(const LabelGrid&, const TriTokenSet<T>&, int64_t, int64_t);

TRANSMAT_INSTANTIATE_TRI(float)
TRANSMAT_INSTANTIATE_TRI(double)

}  // namespace transmat
