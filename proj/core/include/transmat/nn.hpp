#pragma once

#include <memory>
#include <string>
#include <vector>

#include "transmat/ops.hpp"
#include "transmat/rng.hpp"

namespace transmat::nn {

/// Named trainable parameters and non-trainable buffers, in registration order.
template <class T>
class ParameterSet {
public:
    struct Param {
        std::string name;
        Var<T> var;
    };
    struct Buffer {
        std::string name;
        std::shared_ptr<Tensor<T>> tensor;
    };

    Var<T> add_param(const std::string& name, Tensor<T> init);
    std::shared_ptr<Tensor<T>> add_buffer(const std::string& name, Tensor<T> init);

    const std::vector<Param>& params() const { return params_; }
    const std::vector<Buffer>& buffers() const { return buffers_; }
    Var<T> param(const std::string& name) const;

    int64_t parameter_count() const;
    void zero_grad();

private:
    void claim(const std::string& name);
    std::vector<Param> params_;
    std::vector<Buffer> buffers_;
    std::vector<std::string> names_;
};

/// Where a module registers its tensors: the owning set plus a dotted prefix.
template <class T>
struct Scope {
    ParameterSet<T>* set;
    std::string prefix;
    Rng* rng;

    Scope sub(const std::string& name) const { return {set, prefix.empty() ? name : prefix + "." + name, rng}; }
    std::string full(const std::string& name) const { return prefix.empty() ? name : prefix + "." + name; }
    Var<T> param(const std::string& name, Tensor<T> init) const { return set->add_param(full(name), std::move(init)); }
    std::shared_ptr<Tensor<T>> buffer(const std::string& name, Tensor<T> init) const {
        return set->add_buffer(full(name), std::move(init));
    }
};

/// Normal draws truncated to two standard deviations (by resampling).
template <class T>
Tensor<T> trunc_normal(Shape shape, double std, Rng& rng);
template <class T>
Tensor<T> normal(Shape shape, double std, Rng& rng);

template <class T>
struct Linear {
    Var<T> weight;  // [in, out]
    Var<T> bias;    // [out] or undefined

    Linear() = default;
    /// Truncated-normal (std 0.02) weights, zero bias.
    Linear(const Scope<T>& s, int64_t in, int64_t out, bool with_bias = true);
    Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
};

template <class T>
struct Conv2d {
    Var<T> weight;  // [k*k*in, out]
    Var<T> bias;
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    Conv2d() = default;
    /// Kaiming-normal (fan-in, ReLU gain) weights, zero bias.
    Conv2d(const Scope<T>& s, int64_t in, int64_t out, int kernel, int stride, bool with_bias);
    Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, kernel, stride, pad); }
};

template <class T>
struct BatchNorm2d {
    Var<T> gamma;
    Var<T> beta;
    std::shared_ptr<Tensor<T>> running_mean;
    std::shared_ptr<Tensor<T>> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    BatchNorm2d() = default;
    BatchNorm2d(const Scope<T>& s, int64_t channels, bool zero_gamma = false);
    Var<T> operator()(const Var<T>& x, bool training) const {
        return ops::batch_norm(x, gamma, beta, *running_mean, *running_var, training, momentum, eps);
    }
};

template <class T>
struct LayerNorm {
    Var<T> gamma;
    Var<T> beta;
    T eps = T(1e-5);

    LayerNorm() = default;
    LayerNorm(const Scope<T>& s, int64_t channels);
    Var<T> operator()(const Var<T>& x) const { return ops::layer_norm(x, gamma, beta, eps); }
};

/// conv3x3-BN-ReLU-conv3x3-BN plus (projected) identity, then ReLU.
template <class T>
struct BasicBlock {
    Conv2d<T> conv1, conv2;
    BatchNorm2d<T> bn1, bn2;
    bool projected = false;
    Conv2d<T> down;
    BatchNorm2d<T> down_bn;

    BasicBlock() = default;
    /// `zero_init_residual` zeroes the last BN scale so the block starts as its shortcut.
    BasicBlock(const Scope<T>& s, int64_t in, int64_t out, int stride, bool zero_init_residual = false);
    Var<T> operator()(const Var<T>& x, bool training) const;
};

}  // namespace transmat::nn
