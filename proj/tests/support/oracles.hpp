#pragma once

// Brute-force reference implementations. Written straight from the definitions,
// without sharing code with the library, so tests compare two independent paths.

#include <cstdint>
#include <vector>

#include "transmat/mgf.hpp"
#include "transmat/types.hpp"

namespace oracle {

using Mat = std::vector<double>;  // row-major

inline Mat flat(const transmat::Tensor<double>& t) { return Mat(t.storage().begin(), t.storage().end()); }

/// softmax((q + t) k^T / sqrt(d)) v for [L, d] row-major inputs; `t` may be empty.
Mat attention(const Mat& q, const Mat& k, const Mat& v, int64_t len, int64_t d, const Mat& t = {});

/// Binary erosion by explicit (2r+1)^2 neighborhood scan with clamped coordinates.
std::vector<uint8_t> erode(const std::vector<uint8_t>& m, int64_t h, int64_t w, int r);

/// Trimap from alpha by the threshold + erosion rule.
transmat::Trimap trimap(const transmat::AlphaMatte& alpha, int erode_r, int dilate_r, double fg_th = 1.0 - 1e-6,
                        double bg_th = 1e-6);

double sad(const transmat::AlphaMatte& p, const transmat::AlphaMatte& g, const std::vector<uint8_t>& region);
double mse(const transmat::AlphaMatte& p, const transmat::AlphaMatte& g, const std::vector<uint8_t>& region);
double grad(const transmat::AlphaMatte& p, const transmat::AlphaMatte& g, const std::vector<uint8_t>& region,
            double sigma = 1.4);
double conn(const transmat::AlphaMatte& p, const transmat::AlphaMatte& g, const std::vector<uint8_t>& region,
            double step = 0.1);

/// One NHWC feature tensor in double, indexable as (n, y, x, c).
struct Feat {
    int64_t n = 0, h = 0, w = 0, c = 0;
    std::vector<double> v;

    Feat() = default;
    Feat(int64_t n_, int64_t h_, int64_t w_, int64_t c_) : n(n_), h(h_), w(w_), c(c_), v(size_t(n_ * h_ * w_ * c_), 0.0) {}
    double& at(int64_t b, int64_t y, int64_t x, int64_t ch) { return v[size_t(((b * h + y) * w + x) * c + ch)]; }
    double at(int64_t b, int64_t y, int64_t x, int64_t ch) const { return v[size_t(((b * h + y) * w + x) * c + ch)]; }
};

Feat from_tensor(const transmat::Tensor<double>& t);

/// The six fusion steps written out loop by loop, reading the parameters of `m`.
Feat mgf(const transmat::MgfFuse<double>& m, const Feat& prev, const Feat& cur, const Feat& next, const Feat& nonbg);

/// Laplacian pyramid with an explicit 5x5 binomial kernel. Levels 1..L-1 are
/// band-pass, the last the low-pass residual.
std::vector<Mat> laplacian_pyramid(const Mat& img, int64_t h, int64_t w, int levels);

/// sum_k 2^(k-1) mean |Lap_k(p*m) - Lap_k(g*m)|
double laplacian_loss(const Mat& p, const Mat& g, const Mat& m, int64_t h, int64_t w, int levels);

}  // namespace oracle
