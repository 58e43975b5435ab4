#include "transmat/encoder.hpp"

#include <algorithm>
#include <string>

namespace transmat {

void EncoderConfig::validate() const {
    if (stem_widths.size() != 2 || stem_widths[0] < 1 || stem_widths[1] < 1) {
        throw ConfigError("stem_widths must list two positive widths");
    }
    attention.validate();
    const int stages = static_cast<int>(attention.embed_dims.size());
    for (int s : tri_token_stages) {
        if (s < 1 || s > stages) throw ConfigError("tri_token_stages entry " + std::to_string(s) + " out of range");
    }
}

bool EncoderConfig::stage_has_tokens(int stage) const {
    return use_tgtb && std::find(tri_token_stages.begin(), tri_token_stages.end(), stage + 1) != tri_token_stages.end();
}

std::vector<int64_t> EncoderConfig::level_channels() const {
    std::vector<int64_t> c{stem_widths[0], stem_widths[1]};
    for (const int64_t d : attention.embed_dims) c.push_back(2 * d);
    return c;
}

template <class T>
CnnLocalExtractor<T>::CnnLocalExtractor(const nn::Scope<T>& s, int64_t in, const std::vector<int64_t>& widths,
                                        bool zero_init_residual)
    : stem(s.sub("stem"), in, widths[0], 3, 2, false),
      stem_bn(s.sub("stem_bn"), widths[0]),
      block1(s.sub("block1"), widths[0], widths[0], 1, zero_init_residual),
      block2(s.sub("block2"), widths[0], widths[1], 2, zero_init_residual) {}

template <class T>
std::vector<Var<T>> CnnLocalExtractor<T>::operator()(const Var<T>& x, bool training) const {
    const Var<T> l0 = block1(ops::relu(stem_bn(stem(x), training)), training);
    return {l0, block2(l0, training)};
}

template <class T>
Encoder<T>::Encoder(const nn::Scope<T>& s, const EncoderConfig& c)
    : cfg(c),
      local(s.sub("local"), kInputChannels, c.stem_widths),
      embed(s.sub("embed"), c.stem_widths[1], c.attention.embed_dims[0]),
      embed_norm(s.sub("embed_norm"), c.attention.embed_dims[0]) {
    c.validate();
    const auto& dims = c.attention.embed_dims;
    for (size_t i = 1; i < dims.size(); ++i) {
        if (dims[i] != 2 * dims[i - 1]) throw ConfigError("embed_dims must double from stage to stage");
    }
    for (int i = 0; i < static_cast<int>(dims.size()); ++i) {
        stages.emplace_back(s.sub("stage" + std::to_string(i + 1)), c.attention, i, c.stage_has_tokens(i));
    }
}

template <class T>
FeaturePyramid<T> Encoder<T>::operator()(const Var<T>& input, const LabelGrid& trimap, bool training) const {
    if (input.value().rank() != 4 || input.dim(3) != kInputChannels) {
        throw ShapeError("encoder input must be [N, H, W, 4], got " + shape_str(input.shape()));
    }
    if (input.dim(1) % kDivisor != 0 || input.dim(2) % kDivisor != 0) {
        throw ShapeError("encoder input " + std::to_string(input.dim(1)) + "x" + std::to_string(input.dim(2)) +
                         " is not divisible by 32");
    }
    if (trimap.batch != input.dim(0) || trimap.height != input.dim(1) || trimap.width != input.dim(2)) {
        throw ShapeError("trimap does not match the encoder input");
    }
    FeaturePyramid<T> out;
    out.levels = local(input, training);
    Var<T> x = embed_norm(embed(out.levels.back()));
    for (const auto& stage : stages) {
        x = stage(x, trimap);
        out.levels.push_back(x);
    }
    return out;
}

template <class T>
Tensor<T> network_input(const std::vector<ImageRGB>& images, const LabelGrid& trimap) {
    const auto n = static_cast<int64_t>(images.size());
    if (n == 0 || trimap.batch != n) throw ShapeError("network_input: image and trimap batch sizes differ");
    const int64_t h = images[0].height(), w = images[0].width();
    if (trimap.height != h || trimap.width != w) throw ShapeError("network_input: trimap size differs from image");
    Tensor<T> out({n, h, w, 4});
    T* dst = out.data();
    for (int64_t b = 0; b < n; ++b) {
        const auto& img = images[static_cast<size_t>(b)];
        if (img.height() != h || img.width() != w) throw ShapeError("network_input: images differ in size");
        const float* src = img.storage().data();
        for (int64_t p = 0; p < h * w; ++p) {
            dst[0] = static_cast<T>(src[0]);
            dst[1] = static_cast<T>(src[1]);
            dst[2] = static_cast<T>(src[2]);
            switch (static_cast<TrimapLabel>(trimap.labels[static_cast<size_t>(b * h * w + p)])) {
                case TrimapLabel::FG: dst[3] = T(1); break;
                case TrimapLabel::BG: dst[3] = T(0); break;
                case TrimapLabel::UNK: dst[3] = T(0.5); break;
            }
            dst += 4;
            src += 3;
        }
    }
    return out;
}

template struct CnnLocalExtractor<float>;
template struct CnnLocalExtractor<double>;
template struct Encoder<float>;
template struct Encoder<double>;
template Tensor<float> network_input<float>(const std::vector<ImageRGB>&, const LabelGrid&);
template Tensor<double> network_input<double>(const std::vector<ImageRGB>&, const LabelGrid&);

}  // namespace transmat
