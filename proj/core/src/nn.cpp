#include "transmat/nn.hpp"

#include <algorithm>
#include <cmath>

namespace transmat::nn {

template <class T>
void ParameterSet<T>::claim(const std::string& name) {
    if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
        throw std::logic_error("duplicate tensor name " + name);
    }
    names_.push_back(name);
}

template <class T>
Var<T> ParameterSet<T>::add_param(const std::string& name, Tensor<T> init) {
    claim(name);
    auto v = Var<T>::leaf(std::move(init), true);
    params_.push_back({name, v});
    return v;
}

template <class T>
std::shared_ptr<Tensor<T>> ParameterSet<T>::add_buffer(const std::string& name, Tensor<T> init) {
    claim(name);
    auto t = std::make_shared<Tensor<T>>(std::move(init));
    buffers_.push_back({name, t});
    return t;
}

template <class T>
Var<T> ParameterSet<T>::param(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.var;
    throw std::out_of_range("no parameter named " + name);
}

template <class T>
int64_t ParameterSet<T>::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
}

template <class T>
void ParameterSet<T>::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

template <class T>
Tensor<T> normal(Shape shape, double std, Rng& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std);
    for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
    return t;
}

template <class T>
Tensor<T> trunc_normal(Shape shape, double std, Rng& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.storage()) {
        double z = dist(rng);
        while (std::abs(z) > 2.0) z = dist(rng);
        v = static_cast<T>(z * std);
    }
    return t;
}

template <class T>
Linear<T>::Linear(const Scope<T>& s, int64_t in, int64_t out, bool with_bias) {
    weight = s.param("weight", trunc_normal<T>({in, out}, 0.02, *s.rng));
    if (with_bias) bias = s.param("bias", Tensor<T>({out}));
}

template <class T>
Conv2d<T>::Conv2d(const Scope<T>& s, int64_t in, int64_t out, int k, int stride_, bool with_bias)
    : kernel(k), stride(stride_), pad(k / 2) {
    const double fan_in = static_cast<double>(k) * k * in;
    weight = s.param("weight", normal<T>({int64_t{k} * k * in, out}, std::sqrt(2.0 / fan_in), *s.rng));
    if (with_bias) bias = s.param("bias", Tensor<T>({out}));
}

template <class T>
BatchNorm2d<T>::BatchNorm2d(const Scope<T>& s, int64_t channels, bool zero_gamma) {
    gamma = s.param("gamma", Tensor<T>({channels}, zero_gamma ? T(0) : T(1)));
    beta = s.param("beta", Tensor<T>({channels}));
    running_mean = s.buffer("running_mean", Tensor<T>({channels}));
    running_var = s.buffer("running_var", Tensor<T>({channels}, T(1)));
}

template <class T>
LayerNorm<T>::LayerNorm(const Scope<T>& s, int64_t channels) {
    gamma = s.param("gamma", Tensor<T>({channels}, T(1)));
    beta = s.param("beta", Tensor<T>({channels}));
}

template <class T>
BasicBlock<T>::BasicBlock(const Scope<T>& s, int64_t in, int64_t out, int stride, bool zero_init_residual)
    : conv1(s.sub("conv1"), in, out, 3, stride, false),
      conv2(s.sub("conv2"), out, out, 3, 1, false),
      bn1(s.sub("bn1"), out),
      bn2(s.sub("bn2"), out, zero_init_residual),
      projected(stride != 1 || in != out) {
    if (projected) {
        down = Conv2d<T>(s.sub("down"), in, out, 1, stride, false);
        down_bn = BatchNorm2d<T>(s.sub("down_bn"), out);
    }
}

template <class T>
Var<T> BasicBlock<T>::operator()(const Var<T>& x, bool training) const {
    Var<T> y = ops::relu(bn1(conv1(x), training));
    y = bn2(conv2(y), training);
    const Var<T> shortcut = projected ? down_bn(down(x), training) : x;
    return ops::relu(ops::add(y, shortcut));
}

#define TRANSMAT_INSTANTIATE_NN(T)                               \
    template class ParameterSet<T>;                              \
    template Tensor<T> normal<T>(Shape, double, Rng&);           \
    template Tensor<T> trunc_normal<T>(Shape, double, Rng&);     \
    template struct Linear<T>;                                   \
    template struct Conv2d<T>;                                   \
    template struct BatchNorm2d<T>;                              \
    template struct LayerNorm<T>;                                \
    template struct BasicBlock<T>;

TRANSMAT_INSTANTIATE_NN(float)
TRANSMAT_INSTANTIATE_NN(double)

}  // namespace transmat::nn
