#include "transmat/attention.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "transmat/ops.hpp"

namespace transmat::attn {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;

// Row-wise softmax over allowed entries; disallowed entries become exactly zero.
template <class T, class Allowed>
void masked_softmax(MatR<T>& s, Allowed allowed) {
    const auto L = s.rows();
    for (Eigen::Index i = 0; i < L; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index j = 0; j < s.cols(); ++j)
            if (allowed(i, j)) mx = std::max(mx, s(i, j));
        if (mx == -std::numeric_limits<T>::infinity()) {
            s.row(i).setZero();
            continue;
        }
        T denom = 0;
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            const T e = allowed(i, j) ? std::exp(s(i, j) - mx) : T(0);
            s(i, j) = e;
            denom += e;
        }
        s.row(i) /= denom;
    }
}

// Given P = softmax(S) and dP, returns dS = P o (dP - rowsum(dP o P)).
template <class T>
MatR<T> softmax_backward(const MatR<T>& p, const MatR<T>& dp) {
    const Eigen::Matrix<T, Eigen::Dynamic, 1> rows = p.cwiseProduct(dp).rowwise().sum();
    MatR<T> centered = dp;
    centered.colwise() -= rows;
    return p.cwiseProduct(centered);
}

}  // namespace

WindowGeometry WindowGeometry::make(int64_t height, int64_t width, int64_t window, bool shifted) {
    if (window < 1) throw ShapeError("window size must be positive");
    WindowGeometry g;
    g.height = height;
    g.width = width;
    g.window = window;
    if (height <= window && width <= window) {
        g.win_h = height;
        g.win_w = width;
        g.padded_h = height;
        g.padded_w = width;
        g.shift = 0;
        return g;
    }
    g.win_h = g.win_w = window;
    g.padded_h = (height + window - 1) / window * window;
    g.padded_w = (width + window - 1) / window * window;
    g.shift = shifted ? window / 2 : 0;
    return g;
}

WindowLayout::WindowLayout(const WindowGeometry& g) : geom(g) {
    const int64_t L = g.tokens();
    source.resize(static_cast<size_t>(g.num_windows() * L));
    region.resize(source.size(), 0);
    auto region_of = [&](int64_t rolled, int64_t padded) -> int {
        if (g.shift == 0) return 0;
        if (rolled < padded - g.window) return 0;
        return rolled < padded - g.shift ? 1 : 2;
    };
    for (int64_t wy = 0; wy < g.windows_y(); ++wy)
        for (int64_t wx = 0; wx < g.windows_x(); ++wx) {
            const int64_t w = wy * g.windows_x() + wx;
            for (int64_t py = 0; py < g.win_h; ++py)
                for (int64_t px = 0; px < g.win_w; ++px) {
                    const int64_t yy = wy * g.win_h + py, xx = wx * g.win_w + px;
                    const int64_t sy = (yy + g.shift) % g.padded_h;
                    const int64_t sx = (xx + g.shift) % g.padded_w;
                    const size_t slot = static_cast<size_t>(w * L + py * g.win_w + px);
                    source[slot] = (sy < g.height && sx < g.width) ? sy * g.width + sx : -1;
                    region[slot] = static_cast<uint8_t>(region_of(yy, g.padded_h) * 3 + region_of(xx, g.padded_w));
                }
        }
}

bool WindowLayout::may_attend(int64_t window, int64_t query, int64_t key) const {
    const int64_t L = geom.tokens();
    const auto kslot = static_cast<size_t>(window * L + key);
    const auto qslot = static_cast<size_t>(window * L + query);
    return source[kslot] >= 0 && region[kslot] == region[qslot];
}

template <class T>
WindowBatch<T> window_partition(const Tensor<T>& x, int64_t window) {
    if (x.rank() != 4) throw ShapeError("window_partition expects [N, H, W, C], got " + shape_str(x.shape()));
    WindowBatch<T> out;
    out.batch = x.dim(0);
    out.geom = WindowGeometry::make(x.dim(1), x.dim(2), window, false);
    const WindowLayout layout(out.geom);
    const int64_t c = x.dim(3), L = out.geom.tokens(), nw = out.geom.num_windows();
    const int64_t hw = x.dim(1) * x.dim(2);
    out.windows = Tensor<T>({out.batch * nw, L, c});
    for (int64_t n = 0; n < out.batch; ++n)
        for (int64_t w = 0; w < nw; ++w)
            for (int64_t t = 0; t < L; ++t) {
                const int64_t src = layout.at(w, t);
                if (src < 0) continue;
                const T* from = x.data() + (n * hw + src) * c;
                std::copy(from, from + c, out.windows.data() + ((n * nw + w) * L + t) * c);
            }
    return out;
}

template <class T>
Tensor<T> window_reverse(const WindowBatch<T>& b) {
    const WindowLayout layout(b.geom);
    const int64_t c = b.windows.dim(2), L = b.geom.tokens(), nw = b.geom.num_windows();
    const int64_t hw = b.geom.height * b.geom.width;
    Tensor<T> out({b.batch, b.geom.height, b.geom.width, c});
    for (int64_t n = 0; n < b.batch; ++n)
        for (int64_t w = 0; w < nw; ++w)
            for (int64_t t = 0; t < L; ++t) {
                const int64_t src = layout.at(w, t);
                if (src < 0) continue;
                const T* from = b.windows.data() + ((n * nw + w) * L + t) * c;
                std::copy(from, from + c, out.data() + (n * hw + src) * c);
            }
    return out;
}

template <class T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k) {
    const int64_t L = q.dim(0), Lk = k.dim(0), d = q.dim(1);
    MatR<T> s = CMapR<T>(q.data(), L, d) * CMapR<T>(k.data(), Lk, d).transpose() / std::sqrt(T(d));
    masked_softmax(s, [](auto, auto) { return true; });
    return Tensor<T>({L, Lk}, std::vector<T>(s.data(), s.data() + s.size()));
}

template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
    if (q.value().rank() != 2 || k.value().rank() != 2 || v.value().rank() != 2) {
        throw ShapeError("attention expects [L, d] matrices");
    }
    const int64_t L = q.dim(0), Lk = k.dim(0), d = q.dim(1), dv = v.dim(1);
    if (k.dim(1) != d || v.dim(0) != Lk) {
        throw ShapeError("attention: incompatible shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                         ", " + shape_str(v.shape()));
    }
    const T scale = T(1) / std::sqrt(T(d));
    auto p = std::make_shared<MatR<T>>(CMapR<T>(q.value().data(), L, d) *
                                       CMapR<T>(k.value().data(), Lk, d).transpose() * scale);
    masked_softmax(*p, [](auto, auto) { return true; });
    Tensor<T> out({L, dv});
    MapR<T>(out.data(), L, dv).noalias() = *p * CMapR<T>(v.value().data(), Lk, dv);

    return make_result<T>(std::move(out), {q, k, v}, [p, L, Lk, d, dv, scale](Node<T>& self) {
        CMapR<T> go(self.grad.data(), L, dv);
        CMapR<T> qm(self.parents[0]->value.data(), L, d);
        CMapR<T> km(self.parents[1]->value.data(), Lk, d);
        CMapR<T> vm(self.parents[2]->value.data(), Lk, dv);
        const MatR<T> dp = go * vm.transpose();
        const MatR<T> ds = softmax_backward<T>(*p, dp) * scale;
        if (parent_wants_grad(self, 0)) MapR<T>(ops::parent_grad(self, 0).data(), L, d) += ds * km;
        if (parent_wants_grad(self, 1)) MapR<T>(ops::parent_grad(self, 1).data(), Lk, d) += ds.transpose() * qm;
        if (parent_wants_grad(self, 2)) MapR<T>(ops::parent_grad(self, 2).data(), Lk, dv) += p->transpose() * go;
    });
}

template <class T>
Var<T> tri_token_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& tokens) {
    if (tokens.shape() != q.shape()) {
        throw ShapeError("tri_token_attention: token map " + shape_str(tokens.shape()) + " not aligned with query " +
                         shape_str(q.shape()));
    }
    return attention(ops::add(q, tokens), k, v);
}

namespace {

int64_t rel_index(const WindowGeometry& g, int64_t i, int64_t j) {
    const int64_t m = g.window;
    const int64_t dy = i / g.win_w - j / g.win_w;
    const int64_t dx = i % g.win_w - j % g.win_w;
    return (dy + m - 1) * (2 * m - 1) + (dx + m - 1);
}

}  // namespace

template <class T>
Var<T> window_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, const WindowGeometry& geom,
                        const Var<T>& rel_bias) {
    if (q.shape() != k.shape() || q.shape() != v.shape() || q.value().rank() != 4) {
        throw ShapeError("window_attention: q/k/v must share one [N, H, W, C] shape");
    }
    const int64_t n = q.dim(0), h = q.dim(1), w = q.dim(2), c = q.dim(3);
    if (h != geom.height || w != geom.width) throw ShapeError("window_attention: geometry does not match input");
    if (heads < 1 || c % heads != 0) throw ShapeError("window_attention: channels not divisible by heads");
    const int64_t m = geom.window;
    if (rel_bias.defined() && rel_bias.shape() != Shape{(2 * m - 1) * (2 * m - 1), heads}) {
        throw ShapeError("window_attention: relative bias table must be [(2M-1)^2, heads]");
    }

    auto layout = std::make_shared<WindowLayout>(geom);
    const int64_t d = c / heads, L = geom.tokens(), nw = geom.num_windows(), hw = h * w;
    const T scale = T(1) / std::sqrt(T(d));
    // Softmax weights kept for backward: [n, window, head] blocks of L x L.
    auto probs = std::make_shared<std::vector<MatR<T>>>(static_cast<size_t>(n * nw * heads));
    Tensor<T> out(q.shape());

    auto gather = [&](const Tensor<T>& src, int64_t b, int64_t win, int64_t head, MatR<T>& dst) {
        dst.setZero(L, d);
        for (int64_t t = 0; t < L; ++t) {
            const int64_t s = layout->at(win, t);
            if (s < 0) continue;
            const T* from = src.data() + (b * hw + s) * c + head * d;
            std::copy(from, from + d, dst.data() + t * d);
        }
    };

    MatR<T> qw, kw, vw;
    for (int64_t b = 0; b < n; ++b)
        for (int64_t win = 0; win < nw; ++win)
            for (int64_t head = 0; head < heads; ++head) {
                gather(q.value(), b, win, head, qw);
                gather(k.value(), b, win, head, kw);
                gather(v.value(), b, win, head, vw);
                MatR<T>& p = (*probs)[static_cast<size_t>((b * nw + win) * heads + head)];
                p = qw * kw.transpose() * scale;
                if (rel_bias.defined()) {
                    const T* table = rel_bias.value().data();
                    for (int64_t i = 0; i < L; ++i)
                        for (int64_t j = 0; j < L; ++j) p(i, j) += table[rel_index(geom, i, j) * heads + head];
                }
                masked_softmax(p, [&](auto i, auto j) { return layout->may_attend(win, i, j); });
                const MatR<T> o = p * vw;
                for (int64_t t = 0; t < L; ++t) {
                    const int64_t s = layout->at(win, t);
                    if (s < 0) continue;
                    std::copy(o.data() + t * d, o.data() + (t + 1) * d, out.data() + (b * hw + s) * c + head * d);
                }
            }

    std::vector<Var<T>> parents{q, k, v};
    if (rel_bias.defined()) parents.push_back(rel_bias);
    return make_result<T>(std::move(out), parents, [=](Node<T>& self) {
        const Tensor<T>& qv = self.parents[0]->value;
        const Tensor<T>& kv = self.parents[1]->value;
        const Tensor<T>& vv = self.parents[2]->value;
        const bool want_q = parent_wants_grad(self, 0), want_k = parent_wants_grad(self, 1);
        const bool want_v = parent_wants_grad(self, 2);
        const bool want_b = self.parents.size() > 3 && parent_wants_grad(self, 3);
        T* gq = want_q ? ops::parent_grad(self, 0).data() : nullptr;
        T* gk = want_k ? ops::parent_grad(self, 1).data() : nullptr;
        T* gv = want_v ? ops::parent_grad(self, 2).data() : nullptr;
        T* gb = want_b ? ops::parent_grad(self, 3).data() : nullptr;

        auto gather_t = [&](const T* src, int64_t b, int64_t win, int64_t head, MatR<T>& dst) {
            dst.setZero(L, d);
            for (int64_t t = 0; t < L; ++t) {
                const int64_t s = layout->at(win, t);
                if (s < 0) continue;
                const T* from = src + (b * hw + s) * c + head * d;
                std::copy(from, from + d, dst.data() + t * d);
            }
        };
        auto scatter_add = [&](T* dst, const MatR<T>& src, int64_t b, int64_t win, int64_t head) {
            for (int64_t t = 0; t < L; ++t) {
                const int64_t s = layout->at(win, t);
                if (s < 0) continue;
                T* to = dst + (b * hw + s) * c + head * d;
                for (int64_t e = 0; e < d; ++e) to[e] += src(t, e);
            }
        };

        MatR<T> qw, kw, vw, gow;
        for (int64_t b = 0; b < n; ++b)
            for (int64_t win = 0; win < nw; ++win)
                for (int64_t head = 0; head < heads; ++head) {
                    const MatR<T>& p = (*probs)[static_cast<size_t>((b * nw + win) * heads + head)];
                    gather_t(self.grad.data(), b, win, head, gow);
                    gather_t(vv.data(), b, win, head, vw);
                    if (gv) scatter_add(gv, MatR<T>(p.transpose() * gow), b, win, head);
                    if (!gq && !gk && !gb) continue;
                    const MatR<T> ds = softmax_backward<T>(p, MatR<T>(gow * vw.transpose()));
                    if (gb) {
                        for (int64_t i = 0; i < L; ++i)
                            for (int64_t j = 0; j < L; ++j) gb[rel_index(geom, i, j) * heads + head] += ds(i, j);
                    }
                    if (gq) {
                        gather_t(kv.data(), b, win, head, kw);
                        scatter_add(gq, MatR<T>(ds * kw * scale), b, win, head);
                    }
                    if (gk) {
                        gather_t(qv.data(), b, win, head, qw);
                        scatter_add(gk, MatR<T>(ds.transpose() * qw * scale), b, win, head);
                    }
                }
    });
}

#define TRANSMAT_INSTANTIATE_ATTN(T)                                                                  \
    template WindowBatch<T> window_partition(const Tensor<T>&, int64_t);                              \
    template Tensor<T> window_reverse(const WindowBatch<T>&);                                         \
    template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&);                         \
    template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&);                           \
    template Var<T> tri_token_attention(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);  \
    template Var<T> window_attention(const Var<T>&, const Var<T>&, const Var<T>&, int,                \
                                     const WindowGeometry&, const Var<T>&);

TRANSMAT_INSTANTIATE_ATTN(float)
TRANSMAT_INSTANTIATE_ATTN(double)

}  // namespace transmat::attn
