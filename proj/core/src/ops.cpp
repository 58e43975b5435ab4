#include "transmat/ops.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace transmat::ops {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CRowMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

void require_same(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank4(const Shape& s, const char* op) {
    if (s.size() != 4) throw ShapeError(std::string(op) + ": expected NHWC tensor, got " + shape_str(s));
}

template <class T, class F, class D>
Var<T> unary(const Var<T>& x, F f, D dfdx) {
    Tensor<T> out(x.shape());
    const T* xv = x.value().data();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return make_result<T>(std::move(out), {x}, [dfdx](Node<T>& self) {
        auto& g = parent_grad(self, 0);
        const T* xv = self.parents[0]->value.data();
        const T* yv = self.value.data();
        const T* go = self.grad.data();
        for (int64_t i = 0; i < g.size(); ++i) g[i] += go[i] * dfdx(xv[i], yv[i]);
    });
}

// im2col for NHWC input; rows are output positions, columns (ky, kx, cin).
template <class T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, int64_t ho, int64_t wo, MatR<T>& cols) {
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    cols.setZero(n * ho * wo, k * k * c);
    for (int64_t b = 0; b < n; ++b)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                T* row = cols.data() + ((b * ho + oy) * wo + ox) * cols.cols();
                for (int ky = 0; ky < k; ++ky) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int64_t ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        const T* src = x.data() + ((b * h + iy) * w + ix) * c;
                        std::copy(src, src + c, row + (ky * k + kx) * c);
                    }
                }
            }
}

template <class T>
void col2im(const MatR<T>& cols, int k, int stride, int pad, int64_t ho, int64_t wo, Tensor<T>& dx) {
    const int64_t n = dx.dim(0), h = dx.dim(1), w = dx.dim(2), c = dx.dim(3);
    for (int64_t b = 0; b < n; ++b)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                const T* row = cols.data() + ((b * ho + oy) * wo + ox) * cols.cols();
                for (int ky = 0; ky < k; ++ky) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int64_t ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        T* dst = dx.data() + ((b * h + iy) * w + ix) * c;
                        const T* src = row + (ky * k + kx) * c;
                        for (int64_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                    }
                }
            }
}

}  // namespace

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same(a.shape(), b.shape(), "add");
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        accumulate_parent(self, 0, self.grad);
        accumulate_parent(self, 1, self.grad);
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same(a.shape(), b.shape(), "sub");
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        accumulate_parent(self, 0, self.grad);
        if (parent_wants_grad(self, 1)) {
            auto& g = parent_grad(self, 1);
            for (int64_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same(a.shape(), b.shape(), "mul");
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (parent_wants_grad(self, 0)) {
            auto& g = parent_grad(self, 0);
            for (int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (parent_wants_grad(self, 1)) {
            auto& g = parent_grad(self, 1);
            for (int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
    return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
        auto& g = parent_grad(self, 0);
        for (int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    return unary(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> gelu(const Var<T>& x) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    return unary(
        x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
        [](T v, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    return unary(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const int64_t cin = w.dim(0), cout = w.dim(1);
    if (x.dim(-1) != cin) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    }
    if (b.defined() && b.value().size() != cout) throw ShapeError("linear: bias size mismatch");
    const int64_t rows = x.value().size() / cin;
    Shape out_shape = x.shape();
    out_shape.back() = cout;
    Tensor<T> out(out_shape);
    MapR<T> y(out.data(), rows, cout);
    y.noalias() = CMapR<T>(x.value().data(), rows, cin) * CMapR<T>(w.value().data(), cin, cout);
    if (b.defined()) y.rowwise() += CRowMap<T>(b.value().data(), cout);

    std::vector<Var<T>> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return make_result<T>(std::move(out), parents, [rows, cin, cout](Node<T>& self) {
        CMapR<T> gy(self.grad.data(), rows, cout);
        if (parent_wants_grad(self, 0)) {
            MapR<T> gx(parent_grad(self, 0).data(), rows, cin);
            gx.noalias() += gy * CMapR<T>(self.parents[1]->value.data(), cin, cout).transpose();
        }
        if (parent_wants_grad(self, 1)) {
            MapR<T> gw(parent_grad(self, 1).data(), cin, cout);
            gw.noalias() += CMapR<T>(self.parents[0]->value.data(), rows, cin).transpose() * gy;
        }
        if (self.parents.size() > 2 && parent_wants_grad(self, 2)) {
            MapR<T> gb(parent_grad(self, 2).data(), 1, cout);
            gb += gy.colwise().sum();
        }
    });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int k, int stride, int pad) {
    require_rank4(x.shape(), "conv2d");
    const int64_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
    const int64_t cout = w.dim(1);
    if (w.dim(0) != int64_t{k} * k * cin) {
        throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()) + " with kernel " + std::to_string(k));
    }
    if (k == 1 && stride == 1 && pad == 0) return linear(x, w, b);

    const int64_t ho = (h + 2 * pad - k) / stride + 1;
    const int64_t wo = (wd + 2 * pad - k) / stride + 1;
    auto cols = std::make_shared<MatR<T>>();
    im2col(x.value(), k, stride, pad, ho, wo, *cols);

    Tensor<T> out({n, ho, wo, cout});
    MapR<T> y(out.data(), n * ho * wo, cout);
    y.noalias() = *cols * CMapR<T>(w.value().data(), w.dim(0), cout);
    if (b.defined()) y.rowwise() += CRowMap<T>(b.value().data(), cout);

    std::vector<Var<T>> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return make_result<T>(std::move(out), parents, [cols, k, stride, pad, ho, wo, cout](Node<T>& self) {
        const int64_t rows = cols->rows(), kk = cols->cols();
        CMapR<T> gy(self.grad.data(), rows, cout);
        if (parent_wants_grad(self, 1)) {
            MapR<T> gw(parent_grad(self, 1).data(), kk, cout);
            gw.noalias() += cols->transpose() * gy;
        }
        if (self.parents.size() > 2 && parent_wants_grad(self, 2)) {
            MapR<T> gb(parent_grad(self, 2).data(), 1, cout);
            gb += gy.colwise().sum();
        }
        if (parent_wants_grad(self, 0)) {
            MatR<T> gcols = gy * CMapR<T>(self.parents[1]->value.data(), kk, cout).transpose();
            col2im(gcols, k, stride, pad, ho, wo, parent_grad(self, 0));
        }
    });
}

template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum, T eps) {
    const int64_t c = x.dim(-1);
    const int64_t rows = x.value().size() / c;
    std::vector<T> mean(c, T(0)), invstd(c, T(0));
    if (training) {
        std::vector<T> var(c, T(0));
        const T* xv = x.value().data();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t ch = 0; ch < c; ++ch) mean[ch] += xv[r * c + ch];
        for (auto& m : mean) m /= T(rows);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t ch = 0; ch < c; ++ch) {
                const T d = xv[r * c + ch] - mean[ch];
                var[ch] += d * d;
            }
        for (int64_t ch = 0; ch < c; ++ch) {
            const T biased = var[ch] / T(rows);
            invstd[ch] = T(1) / std::sqrt(biased + eps);
            const T unbiased = rows > 1 ? var[ch] / T(rows - 1) : biased;
            running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mean[ch];
            running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * unbiased;
        }
    } else {
        for (int64_t ch = 0; ch < c; ++ch) {
            mean[ch] = running_mean[ch];
            invstd[ch] = T(1) / std::sqrt(running_var[ch] + eps);
        }
    }

    auto xhat = std::make_shared<Tensor<T>>(x.shape());
    Tensor<T> out(x.shape());
    const T* g = gamma.value().data();
    const T* bt = beta.value().data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t i = r * c + ch;
            const T xh = (x.value()[i] - mean[ch]) * invstd[ch];
            (*xhat)[i] = xh;
            out[i] = g[ch] * xh + bt[ch];
        }

    return make_result<T>(std::move(out), {x, gamma, beta},
                          [xhat, invstd, training, rows, c](Node<T>& self) {
        const T* gy = self.grad.data();
        const T* g = self.parents[1]->value.data();
        std::vector<T> sum_dy(c, T(0)), sum_dy_xh(c, T(0));
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t ch = 0; ch < c; ++ch) {
                const int64_t i = r * c + ch;
                sum_dy[ch] += gy[i];
                sum_dy_xh[ch] += gy[i] * (*xhat)[i];
            }
        if (parent_wants_grad(self, 1)) {
            auto& gg = parent_grad(self, 1);
            for (int64_t ch = 0; ch < c; ++ch) gg[ch] += sum_dy_xh[ch];
        }
        if (parent_wants_grad(self, 2)) {
            auto& gb = parent_grad(self, 2);
            for (int64_t ch = 0; ch < c; ++ch) gb[ch] += sum_dy[ch];
        }
        if (parent_wants_grad(self, 0)) {
            auto& gx = parent_grad(self, 0);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t ch = 0; ch < c; ++ch) {
                    const int64_t i = r * c + ch;
                    if (training) {
                        gx[i] += g[ch] * invstd[ch] *
                                 (gy[i] - sum_dy[ch] / T(rows) - (*xhat)[i] * sum_dy_xh[ch] / T(rows));
                    } else {
                        gx[i] += g[ch] * invstd[ch] * gy[i];
                    }
                }
        }
    });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const int64_t c = x.dim(-1);
    const int64_t rows = x.value().size() / c;
    auto xhat = std::make_shared<Tensor<T>>(x.shape());
    auto invstd = std::make_shared<std::vector<T>>(rows);
    Tensor<T> out(x.shape());
    const T* xv = x.value().data();
    const T* g = gamma.value().data();
    const T* bt = beta.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv + r * c;
        T mean = 0;
        for (int64_t ch = 0; ch < c; ++ch) mean += row[ch];
        mean /= T(c);
        T var = 0;
        for (int64_t ch = 0; ch < c; ++ch) var += (row[ch] - mean) * (row[ch] - mean);
        var /= T(c);
        const T is = T(1) / std::sqrt(var + eps);
        (*invstd)[r] = is;
        for (int64_t ch = 0; ch < c; ++ch) {
            const T xh = (row[ch] - mean) * is;
            (*xhat)[r * c + ch] = xh;
            out[r * c + ch] = g[ch] * xh + bt[ch];
        }
    }
    return make_result<T>(std::move(out), {x, gamma, beta}, [xhat, invstd, rows, c](Node<T>& self) {
        const T* gy = self.grad.data();
        const T* g = self.parents[1]->value.data();
        const bool want_x = parent_wants_grad(self, 0);
        const bool want_g = parent_wants_grad(self, 1);
        const bool want_b = parent_wants_grad(self, 2);
        T* gx = want_x ? parent_grad(self, 0).data() : nullptr;
        T* gg = want_g ? parent_grad(self, 1).data() : nullptr;
        T* gb = want_b ? parent_grad(self, 2).data() : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
            const T* dy = gy + r * c;
            const T* xh = xhat->data() + r * c;
            T sum_dxh = 0, sum_dxh_xh = 0;
            for (int64_t ch = 0; ch < c; ++ch) {
                const T dxh = dy[ch] * g[ch];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh[ch];
                if (gg) gg[ch] += dy[ch] * xh[ch];
                if (gb) gb[ch] += dy[ch];
            }
            if (gx) {
                const T is = (*invstd)[r];
                for (int64_t ch = 0; ch < c; ++ch) {
                    const T dxh = dy[ch] * g[ch];
                    gx[r * c + ch] += is * (dxh - sum_dxh / T(c) - xh[ch] * sum_dxh_xh / T(c));
                }
            }
        }
    });
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    Shape base = xs.front().shape();
    int64_t ctotal = 0;
    std::vector<int64_t> widths;
    for (const auto& x : xs) {
        Shape s = x.shape();
        if (s.size() != base.size()) throw ShapeError("concat_channels: rank mismatch");
        for (size_t d = 0; d + 1 < s.size(); ++d)
            if (s[d] != base[d]) {
                throw ShapeError("concat_channels: " + shape_str(s) + " vs " + shape_str(base));
            }
        widths.push_back(s.back());
        ctotal += s.back();
    }
    const int64_t rows = xs.front().value().size() / widths.front();
    Shape out_shape = base;
    out_shape.back() = ctotal;
    Tensor<T> out(out_shape);
    int64_t off = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const T* src = xs[i].value().data();
        for (int64_t r = 0; r < rows; ++r)
            std::copy(src + r * widths[i], src + (r + 1) * widths[i], out.data() + r * ctotal + off);
        off += widths[i];
    }
    return make_result<T>(std::move(out), xs, [widths, rows, ctotal](Node<T>& self) {
        int64_t off = 0;
        for (size_t i = 0; i < widths.size(); ++i) {
            if (parent_wants_grad(self, i)) {
                T* g = parent_grad(self, i).data();
                for (int64_t r = 0; r < rows; ++r) {
                    const T* src = self.grad.data() + r * ctotal + off;
                    for (int64_t ch = 0; ch < widths[i]; ++ch) g[r * widths[i] + ch] += src[ch];
                }
            }
            off += widths[i];
        }
    });
}

template <class T>
Var<T> avg_pool2(const Var<T>& x) {
    require_rank4(x.shape(), "avg_pool2");
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int64_t ho = (h + 1) / 2, wo = (w + 1) / 2;
    Tensor<T> out({n, ho, wo, c});
    const auto& xv = x.value();
    for (int64_t b = 0; b < n; ++b)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                const int64_t y1 = std::min(h, 2 * oy + 2), x1 = std::min(w, 2 * ox + 2);
                const T inv = T(1) / T((y1 - 2 * oy) * (x1 - 2 * ox));
                for (int64_t y = 2 * oy; y < y1; ++y)
                    for (int64_t xx = 2 * ox; xx < x1; ++xx)
                        for (int64_t ch = 0; ch < c; ++ch) out.at(b, oy, ox, ch) += xv.at(b, y, xx, ch) * inv;
            }
    return make_result<T>(std::move(out), {x}, [n, h, w, c, ho, wo](Node<T>& self) {
        auto& g = parent_grad(self, 0);
        for (int64_t b = 0; b < n; ++b)
            for (int64_t oy = 0; oy < ho; ++oy)
                for (int64_t ox = 0; ox < wo; ++ox) {
                    const int64_t y1 = std::min(h, 2 * oy + 2), x1 = std::min(w, 2 * ox + 2);
                    const T inv = T(1) / T((y1 - 2 * oy) * (x1 - 2 * ox));
                    for (int64_t y = 2 * oy; y < y1; ++y)
                        for (int64_t xx = 2 * ox; xx < x1; ++xx)
                            for (int64_t ch = 0; ch < c; ++ch)
                                g.at(b, y, xx, ch) += self.grad.at(b, oy, ox, ch) * inv;
                }
    });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    require_rank4(x.shape(), "global_avg_pool");
    const int64_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
    Tensor<T> out({n, c});
    const T inv = T(1) / T(hw);
    for (int64_t b = 0; b < n; ++b)
        for (int64_t p = 0; p < hw; ++p)
            for (int64_t ch = 0; ch < c; ++ch) out[b * c + ch] += x.value()[(b * hw + p) * c + ch];
    for (auto& v : out.storage()) v *= inv;
    return make_result<T>(std::move(out), {x}, [n, hw, c, inv](Node<T>& self) {
        auto& g = parent_grad(self, 0);
        for (int64_t b = 0; b < n; ++b)
            for (int64_t p = 0; p < hw; ++p)
                for (int64_t ch = 0; ch < c; ++ch) g[(b * hw + p) * c + ch] += self.grad[b * c + ch] * inv;
    });
}

namespace {

struct LerpTap {
    int64_t i0, i1;
    double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<LerpTap> bilinear_taps(int64_t in, int64_t out) {
    std::vector<LerpTap> taps(static_cast<size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        int64_t i0 = static_cast<int64_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int64_t i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int64_t out_h, int64_t out_w) {
    require_rank4(x.shape(), "resize_bilinear");
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    auto ty = bilinear_taps(h, out_h);
    auto tx = bilinear_taps(w, out_w);
    Tensor<T> out({n, out_h, out_w, c});
    const auto& xv = x.value();
    for (int64_t b = 0; b < n; ++b)
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[static_cast<size_t>(oy)];
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const auto& e = tx[static_cast<size_t>(ox)];
                const T w00 = T((1 - a.w1) * (1 - e.w1)), w01 = T((1 - a.w1) * e.w1);
                const T w10 = T(a.w1 * (1 - e.w1)), w11 = T(a.w1 * e.w1);
                for (int64_t ch = 0; ch < c; ++ch) {
                    out.at(b, oy, ox, ch) = w00 * xv.at(b, a.i0, e.i0, ch) + w01 * xv.at(b, a.i0, e.i1, ch) +
                                            w10 * xv.at(b, a.i1, e.i0, ch) + w11 * xv.at(b, a.i1, e.i1, ch);
                }
            }
        }
    return make_result<T>(std::move(out), {x}, [ty, tx, n, c, out_h, out_w](Node<T>& self) {
        auto& g = parent_grad(self, 0);
        for (int64_t b = 0; b < n; ++b)
            for (int64_t oy = 0; oy < out_h; ++oy) {
                const auto& a = ty[static_cast<size_t>(oy)];
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    const auto& e = tx[static_cast<size_t>(ox)];
                    const T w00 = T((1 - a.w1) * (1 - e.w1)), w01 = T((1 - a.w1) * e.w1);
                    const T w10 = T(a.w1 * (1 - e.w1)), w11 = T(a.w1 * e.w1);
                    for (int64_t ch = 0; ch < c; ++ch) {
                        const T go = self.grad.at(b, oy, ox, ch);
                        g.at(b, a.i0, e.i0, ch) += w00 * go;
                        g.at(b, a.i0, e.i1, ch) += w01 * go;
                        g.at(b, a.i1, e.i0, ch) += w10 * go;
                        g.at(b, a.i1, e.i1, ch) += w11 * go;
                    }
                }
            }
    });
}

template <class T>
Var<T> mul_mask(const Var<T>& x, const Tensor<T>& mask) {
    require_rank4(x.shape(), "mul_mask");
    const int64_t c = x.dim(3);
    const int64_t pix = x.value().size() / c;
    if (mask.size() != pix) {
        throw ShapeError("mul_mask: mask " + shape_str(mask.shape()) + " vs input " + shape_str(x.shape()));
    }
    Tensor<T> out(x.shape());
    for (int64_t p = 0; p < pix; ++p)
        for (int64_t ch = 0; ch < c; ++ch) out[p * c + ch] = x.value()[p * c + ch] * mask[p];
    return make_result<T>(std::move(out), {x}, [mask, pix, c](Node<T>& self) {
        auto& g = parent_grad(self, 0);
        for (int64_t p = 0; p < pix; ++p)
            for (int64_t ch = 0; ch < c; ++ch) g[p * c + ch] += self.grad[p * c + ch] * mask[p];
    });
}

template <class T>
Var<T> channel_affine(const Var<T>& x, const Var<T>& scale, const Var<T>& shift) {
    require_rank4(x.shape(), "channel_affine");
    const int64_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
    const Shape nc{n, c};
    if (scale.defined() && scale.shape() != nc) throw ShapeError("channel_affine: scale must be [N, C]");
    if (shift.defined() && shift.shape() != nc) throw ShapeError("channel_affine: shift must be [N, C]");
    Tensor<T> out(x.shape());
    for (int64_t b = 0; b < n; ++b)
        for (int64_t p = 0; p < hw; ++p)
            for (int64_t ch = 0; ch < c; ++ch) {
                const int64_t i = (b * hw + p) * c + ch;
                T v = x.value()[i];
                if (scale.defined()) v *= scale.value()[b * c + ch];
                if (shift.defined()) v += shift.value()[b * c + ch];
                out[i] = v;
            }
    std::vector<Var<T>> parents{x};
    const int si = scale.defined() ? static_cast<int>(parents.size()) : -1;
    if (scale.defined()) parents.push_back(scale);
    const int bi = shift.defined() ? static_cast<int>(parents.size()) : -1;
    if (shift.defined()) parents.push_back(shift);
    return make_result<T>(std::move(out), parents, [n, hw, c, si, bi](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const T* sv = si >= 0 ? self.parents[static_cast<size_t>(si)]->value.data() : nullptr;
        T* gx = parent_wants_grad(self, 0) ? parent_grad(self, 0).data() : nullptr;
        T* gs = (si >= 0 && parent_wants_grad(self, static_cast<size_t>(si)))
                    ? parent_grad(self, static_cast<size_t>(si)).data()
                    : nullptr;
        T* gb = (bi >= 0 && parent_wants_grad(self, static_cast<size_t>(bi)))
                    ? parent_grad(self, static_cast<size_t>(bi)).data()
                    : nullptr;
        for (int64_t b = 0; b < n; ++b)
            for (int64_t p = 0; p < hw; ++p)
                for (int64_t ch = 0; ch < c; ++ch) {
                    const int64_t i = (b * hw + p) * c + ch;
                    const T go = self.grad[i];
                    if (gx) gx[i] += sv ? go * sv[b * c + ch] : go;
                    if (gs) gs[b * c + ch] += go * xv[i];
                    if (gb) gb[b * c + ch] += go;
                }
    });
}

template <class T>
Var<T> space_to_depth2(const Var<T>& x) {
    require_rank4(x.shape(), "space_to_depth2");
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int64_t ho = (h + 1) / 2, wo = (w + 1) / 2;
    static constexpr int kOffsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    Tensor<T> out({n, ho, wo, 4 * c});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox)
                for (int q = 0; q < 4; ++q) {
                    const int64_t y = 2 * oy + kOffsets[q][0], xx = 2 * ox + kOffsets[q][1];
                    if (y >= h || xx >= w) continue;
                    for (int64_t ch = 0; ch < c; ++ch) out.at(b, oy, ox, q * c + ch) = x.value().at(b, y, xx, ch);
                }
    return make_result<T>(std::move(out), {x}, [n, h, w, c, ho, wo](Node<T>& self) {
        auto& g = parent_grad(self, 0);
        for (int64_t b = 0; b < n; ++b)
            for (int64_t oy = 0; oy < ho; ++oy)
                for (int64_t ox = 0; ox < wo; ++ox)
                    for (int q = 0; q < 4; ++q) {
                        const int64_t y = 2 * oy + kOffsets[q][0], xx = 2 * ox + kOffsets[q][1];
                        if (y >= h || xx >= w) continue;
                        for (int64_t ch = 0; ch < c; ++ch) g.at(b, y, xx, ch) += self.grad.at(b, oy, ox, q * c + ch);
                    }
    });
}

template <class T>
Var<T> sum(const Var<T>& x) {
    T s = 0;
    for (T v : x.value().span()) s += v;
    return make_result<T>(Tensor<T>({1}, s), {x}, [](Node<T>& self) {
        auto& g = parent_grad(self, 0);
        const T go = self.grad[0];
        for (int64_t i = 0; i < g.size(); ++i) g[i] += go;
    });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto& g = parent_grad(self, 0);
        for (int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <class T>
Var<T> dot_const(const Var<T>& x, const Tensor<T>& w) {
    require_same(x.shape(), w.shape(), "dot_const");
    T s = 0;
    for (int64_t i = 0; i < w.size(); ++i) s += x.value()[i] * w[i];
    return make_result<T>(Tensor<T>({1}, s), {x}, [w](Node<T>& self) {
        auto& g = parent_grad(self, 0);
        const T go = self.grad[0];
        for (int64_t i = 0; i < g.size(); ++i) g[i] += go * w[i];
    });
}

template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& scalars, const std::vector<T>& weights) {
    if (scalars.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
    T s = 0;
    for (size_t i = 0; i < scalars.size(); ++i) s += weights[i] * scalars[i].value()[0];
    return make_result<T>(Tensor<T>({1}, s), scalars, [weights](Node<T>& self) {
        for (size_t i = 0; i < weights.size(); ++i)
            if (parent_wants_grad(self, i)) parent_grad(self, i)[0] += weights[i] * self.grad[0];
    });
}

#define TRANSMAT_INSTANTIATE_OPS(T)                                                                   \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                \
    template Var<T> scale(const Var<T>&, T);                                                          \
    template Var<T> relu(const Var<T>&);                                                              \
    template Var<T> gelu(const Var<T>&);                                                              \
    template Var<T> sigmoid(const Var<T>&);                                                           \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                              \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int, int);               \
    template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&,   \
                               bool, T, T);                                                           \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                       \
    template Var<T> concat_channels(const std::vector<Var<T>>&);                                      \
    template Var<T> avg_pool2(const Var<T>&);                                                         \
    template Var<T> global_avg_pool(const Var<T>&);                                                   \
    template Var<T> resize_bilinear(const Var<T>&, int64_t, int64_t);                                 \
    template Var<T> mul_mask(const Var<T>&, const Tensor<T>&);                                        \
    template Var<T> channel_affine(const Var<T>&, const Var<T>&, const Var<T>&);                      \
    template Var<T> space_to_depth2(const Var<T>&);                                                   \
    template Var<T> sum(const Var<T>&);                                                               \
    template Var<T> reshape(const Var<T>&, Shape);                                                    \
    template Var<T> dot_const(const Var<T>&, const Tensor<T>&);                                       \
    template Var<T> weighted_sum(const std::vector<Var<T>>&, const std::vector<T>&);

TRANSMAT_INSTANTIATE_OPS(float)
TRANSMAT_INSTANTIATE_OPS(double)

}  // namespace transmat::ops
