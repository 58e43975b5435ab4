#pragma once

#include <vector>

#include "transmat/autograd.hpp"

// Differentiable tensor operations. Spatial tensors are NHWC. Every function here
// is instantiated for float (training) and double (gradient checking).
namespace transmat::ops {

template <class T>
Tensor<T>& parent_grad(Node<T>& self, size_t i) {
    return self.parents[i]->grad_buffer();
}

template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T s);

template <class T> Var<T> relu(const Var<T>& x);
template <class T> Var<T> gelu(const Var<T>& x);
template <class T> Var<T> sigmoid(const Var<T>& x);

/// y = x W + b over the last axis. `w` is [Cin, Cout]; `b` may be undefined.
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// Square-kernel 2-D convolution with zero padding. `w` is [k*k*Cin, Cout] in
/// (ky, kx, cin) row order; `b` may be undefined.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int kernel, int stride, int pad);

/// Per-channel batch normalization over N, H, W. Training mode uses batch
/// statistics and updates the running buffers; eval mode reads them.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum, T eps);

/// Normalization over the last axis.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);

template <class T> Var<T> concat_channels(const std::vector<Var<T>>& xs);

/// 2x2 average pooling; odd borders average only the cells that exist.
template <class T> Var<T> avg_pool2(const Var<T>& x);

/// [N, H, W, C] -> [N, C].
template <class T> Var<T> global_avg_pool(const Var<T>& x);

/// Bilinear resampling with half-pixel centers (align_corners = false).
template <class T> Var<T> resize_bilinear(const Var<T>& x, int64_t out_h, int64_t out_w);

/// Multiplies by a constant [N, H, W, 1] mask broadcast over channels.
template <class T> Var<T> mul_mask(const Var<T>& x, const Tensor<T>& mask);

/// y[n,h,w,c] = x[n,h,w,c] * scale[n,c] + shift[n,c]; either side may be undefined.
template <class T>
Var<T> channel_affine(const Var<T>& x, const Var<T>& scale, const Var<T>& shift);

/// Gathers 2x2 neighborhoods into channels: [N,H,W,C] -> [N,ceil(H/2),ceil(W/2),4C],
/// zero-padding odd borders. Channel blocks are ordered (0,0), (1,0), (0,1), (1,1).
template <class T> Var<T> space_to_depth2(const Var<T>& x);

/// Scalar (shape [1]) sum of all elements.
template <class T> Var<T> sum(const Var<T>& x);

/// Same elements, new shape.
template <class T> Var<T> reshape(const Var<T>& x, Shape shape);

/// Scalar sum of x * w for a constant weight tensor of the same shape.
template <class T> Var<T> dot_const(const Var<T>& x, const Tensor<T>& w);

/// Scalar sum_i weights[i] * scalars[i].
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& scalars, const std::vector<T>& weights);

}  // namespace transmat::ops
