#include "transmat/tgtb.hpp"

#include <string>

namespace transmat {

void AttentionConfig::validate() const {
    const size_t stages = embed_dims.size();
    if (stages == 0) throw ConfigError("at least one attention stage is required");
    if (num_heads.size() != stages || blocks_per_stage.size() != stages) {
        throw ConfigError("embed_dims, num_heads and blocks_per_stage must have equal length");
    }
    for (size_t i = 0; i < stages; ++i) {
        if (num_heads[i] < 1 || embed_dims[i] % num_heads[i] != 0) {
            throw ConfigError("stage " + std::to_string(i + 1) + ": embed_dim " + std::to_string(embed_dims[i]) +
                              " not divisible by num_heads " + std::to_string(num_heads[i]));
        }
        if (blocks_per_stage[i] < 1) throw ConfigError("stage " + std::to_string(i + 1) + " needs at least one block");
    }
    if (window_size < 1) throw ConfigError("window_size must be at least 1");
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be at least 1");
    if (tri_token_period < 1) throw ConfigError("tri_token_period must be at least 1");
}

template <class T>
TgtbBlock<T>::TgtbBlock(const nn::Scope<T>& s, int64_t dim_, int heads_, int window_, int mlp_ratio, bool shifted_,
                        bool tri_token_, bool with_rel_bias, bool zero_init_out)
    : dim(dim_), heads(heads_), window(window_), shifted(shifted_), tri_token(tri_token_),
      norm1(s.sub("norm1"), dim_), norm2(s.sub("norm2"), dim_),
      q(s.sub("q"), dim_, dim_), k(s.sub("k"), dim_, dim_), v(s.sub("v"), dim_, dim_),
      proj(s.sub("proj"), dim_, dim_),
      fc1(s.sub("fc1"), dim_, dim_ * mlp_ratio),
      fc2(s.sub("fc2"), dim_ * mlp_ratio, dim_) {
    if (with_rel_bias) {
        const int64_t side = 2 * int64_t{window_} - 1;
        rel_bias = s.param("rel_bias", nn::trunc_normal<T>({side * side, heads_}, 0.02, *s.rng));
    }
    if (zero_init_out) {
        proj.weight.mutable_value().fill(T(0));
        fc2.weight.mutable_value().fill(T(0));
    }
}

template <class T>
Var<T> TgtbBlock<T>::operator()(const Var<T>& x, const Var<T>& tri_map) const {
    const auto geom = attn::WindowGeometry::make(x.dim(1), x.dim(2), window, shifted);
    const Var<T> h = norm1(x);
    Var<T> query = q(h);
    if (tri_token) {
        if (!tri_map.defined()) throw ShapeError("tri-token block called without a tri-token map");
        query = ops::add(query, tri_map);
    }
    const Var<T> a = attn::window_attention(query, k(h), v(h), heads, geom, rel_bias);
    const Var<T> y = ops::add(x, proj(a));
    return ops::add(y, fc2(ops::gelu(fc1(norm2(y)))));
}

template <class T>
PatchMerge<T>::PatchMerge(const nn::Scope<T>& s, int64_t dim)
    : norm(s.sub("norm"), 4 * dim), reduce(s.sub("reduce"), 4 * dim, 2 * dim, false) {}

template <class T>
TgtbStage<T>::TgtbStage(const nn::Scope<T>& s, const AttentionConfig& cfg, int stage, bool enabled)
    : tri_token_enabled(enabled) {
    const auto i = static_cast<size_t>(stage);
    const int64_t dim = cfg.embed_dims[i];
    if (enabled) tokens = init_tokens<T>(s.sub("tri"), dim);
    for (int b = 0; b < cfg.blocks_per_stage[i]; ++b) {
        blocks.emplace_back(s.sub("block" + std::to_string(b)), dim, cfg.num_heads[i], cfg.window_size, cfg.mlp_ratio,
                            b % 2 == 1, enabled && cfg.uses_tri_token(b), cfg.relative_position_bias);
    }
    merge = PatchMerge<T>(s.sub("merge"), dim);
}

template <class T>
int TgtbStage<T>::tri_token_blocks() const {
    int n = 0;
    for (const auto& b : blocks) n += b.tri_token ? 1 : 0;
    return n;
}

template <class T>
Var<T> TgtbStage<T>::operator()(const Var<T>& x, const LabelGrid& trimap, Var<T>* pre_merge) const {
    Var<T> tri_map;
    if (tri_token_blocks() > 0) tri_map = expand(trimap, tokens, x.dim(1), x.dim(2));
    Var<T> y = x;
    for (const auto& b : blocks) y = b(y, tri_map);
    if (pre_merge) *pre_merge = y;
    return merge(y);
}

template struct TgtbBlock<float>;
template struct TgtbBlock<double>;
template struct PatchMerge<float>;
template struct PatchMerge<double>;
template struct TgtbStage<float>;
template struct TgtbStage<double>;

}  // namespace transmat
