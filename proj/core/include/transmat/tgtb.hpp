#pragma once

#include <vector>

#include "transmat/attention.hpp"
#include "transmat/nn.hpp"
#include "transmat/tri_token.hpp"

namespace transmat {

struct AttentionConfig {
    std::vector<int64_t> embed_dims{32, 64, 128, 256};
    std::vector<int> num_heads{2, 4, 8, 8};
    int window_size = 4;
    int mlp_ratio = 4;
    std::vector<int> blocks_per_stage{2, 2, 6, 2};
    int tri_token_period = 5;
    bool relative_position_bias = false;

    /// Throws ConfigError naming the first violated invariant.
    void validate() const;
    /// Whether block `b` of a tri-token-enabled stage adds tokens to its queries.
    bool uses_tri_token(int block) const { return block % tri_token_period == 0; }
};

/// Pre-norm transformer block over a stage grid: x + proj(attn(LN x)),
/// then x + MLP(LN x). Odd blocks use shifted windows.
template <class T>
struct TgtbBlock {
    int64_t dim = 0;
    int heads = 1;
    int window = 4;
    bool shifted = false;
    bool tri_token = false;
    nn::LayerNorm<T> norm1, norm2;
    nn::Linear<T> q, k, v, proj, fc1, fc2;
    Var<T> rel_bias;  // [(2M-1)^2, heads] or undefined

    TgtbBlock() = default;
    /// `zero_init_out` zeroes proj and fc2 so the block starts as the identity.
    TgtbBlock(const nn::Scope<T>& s, int64_t dim, int heads, int window, int mlp_ratio, bool shifted, bool tri_token,
              bool rel_bias, bool zero_init_out = false);

    /// `tri_map` [N, H, W, C] is required when this block is tri-token guided.
    Var<T> operator()(const Var<T>& x, const Var<T>& tri_map) const;
};

/// Swin-style patch merging: 2x2 neighborhoods to channels, LN, linear 4C -> 2C.
template <class T>
struct PatchMerge {
    nn::LayerNorm<T> norm;
    nn::Linear<T> reduce;

    PatchMerge() = default;
    PatchMerge(const nn::Scope<T>& s, int64_t dim);
    Var<T> operator()(const Var<T>& x) const { return reduce(norm(ops::space_to_depth2(x))); }
};

template <class T>
struct TgtbStage {
    std::vector<TgtbBlock<T>> blocks;
    bool tri_token_enabled = false;
    TriTokenSet<T> tokens;  // only registered when enabled
    PatchMerge<T> merge;

    TgtbStage() = default;
    TgtbStage(const nn::Scope<T>& s, const AttentionConfig& cfg, int stage, bool tri_token_enabled);

    int tri_token_blocks() const;
    /// Runs the blocks on the stage grid; output is the merged (half-size, 2C) map.
    /// `pre_merge` receives the block output before merging when non-null.
    Var<T> operator()(const Var<T>& x, const LabelGrid& trimap, Var<T>* pre_merge = nullptr) const;
};

}  // namespace transmat
