#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "transmat/attention.hpp"
#include "transmat/gradcheck.hpp"
#include "transmat/ops.hpp"
#include "transmat/tgtb.hpp"

using namespace transmat;

namespace {

oracle::Mat rows(const Tensor<double>& t) { return oracle::flat(t); }

int64_t floor_div(int64_t a, int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Reference multi-head window attention: a position attends to every real
// position in the same (possibly shifted) window that was adjacent before the roll.
Tensor<double> window_attention_oracle(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                                       int heads, int64_t window, bool shifted) {
    const int64_t n = q.dim(0), h = q.dim(1), w = q.dim(2), c = q.dim(3), d = c / heads;
    const bool single = h <= window && w <= window;
    const int64_t s = (!single && shifted) ? window / 2 : 0;
    auto group = [&](int64_t y, int64_t x) -> std::pair<int64_t, int64_t> {
        if (single) return {0, 0};
        return {floor_div(y - s, window), floor_div(x - s, window)};
    };
    Tensor<double> out(q.shape());
    for (int64_t b = 0; b < n; ++b)
        for (int hd = 0; hd < heads; ++hd) {
            std::vector<bool> done(size_t(h * w), false);
            for (int64_t p = 0; p < h * w; ++p) {
                if (done[size_t(p)]) continue;
                const auto g = group(p / w, p % w);
                std::vector<int64_t> members;
                for (int64_t r = 0; r < h * w; ++r)
                    if (group(r / w, r % w) == g) members.push_back(r);
                const auto len = int64_t(members.size());
                oracle::Mat qm(size_t(len * d)), km(qm.size()), vm(qm.size());
                for (int64_t i = 0; i < len; ++i)
                    for (int64_t j = 0; j < d; ++j) {
                        const int64_t y = members[size_t(i)] / w, x = members[size_t(i)] % w;
                        qm[size_t(i * d + j)] = q.at(b, y, x, hd * d + j);
                        km[size_t(i * d + j)] = k.at(b, y, x, hd * d + j);
                        vm[size_t(i * d + j)] = v.at(b, y, x, hd * d + j);
                    }
                const auto o = oracle::attention(qm, km, vm, len, d);
                for (int64_t i = 0; i < len; ++i) {
                    const int64_t y = members[size_t(i)] / w, x = members[size_t(i)] % w;
                    for (int64_t j = 0; j < d; ++j) out.at(b, y, x, hd * d + j) = o[size_t(i * d + j)];
                    done[size_t(members[size_t(i)])] = true;
                }
            }
        }
    return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(WindowPartition, DivisibleRoundTrip) {
    auto rng = make_rng(1);
    const auto x = fixture::uniform({2, 8, 8, 3}, rng);
    const auto wb = attn::window_partition(x, 4);
    EXPECT_EQ(wb.windows.shape(), (Shape{8, 16, 3}));
    EXPECT_EQ(attn::window_reverse(wb), x);
    // Window 1 of sample 0 is the top-right 4x4 tile, row-major.
    for (int64_t t = 0; t < 16; ++t)
        for (int64_t ch = 0; ch < 3; ++ch) EXPECT_EQ(wb.windows[(16 + t) * 3 + ch], x.at(0, t / 4, 4 + t % 4, ch));
}

TEST(WindowPartition, PaddedRoundTrip) {
    auto rng = make_rng(2);
    const auto x = fixture::uniform({1, 5, 5, 2}, rng);
    const auto wb = attn::window_partition(x, 4);
    EXPECT_EQ(wb.geom.padded_h, 8);
    EXPECT_EQ(wb.windows.shape(), (Shape{4, 16, 2}));
    // Padding is zero.
    EXPECT_EQ(wb.windows[(3 * 16 + 15) * 2], 0.0);
    EXPECT_EQ(attn::window_reverse(wb), x);
}

TEST(WindowPartition, SingleWindowIsFlattenedInput) {
    auto rng = make_rng(3);
    const auto x = fixture::uniform({1, 4, 4, 3}, rng);
    const auto wb = attn::window_partition(x, 4);
    EXPECT_EQ(wb.windows.shape(), (Shape{1, 16, 3}));
    EXPECT_EQ(wb.windows.storage(), x.storage());
}

TEST(Attention, ZeroQueriesAverageValues) {
    auto rng = make_rng(4);
    const auto v = fixture::uniform({6, 3}, rng);
    const auto out = attn::attention(Var<double>::constant(Tensor<double>({6, 3})),
                                     Var<double>::constant(fixture::uniform({6, 3}, rng)), Var<double>::constant(v));
    for (int64_t i = 0; i < 6; ++i)
        for (int64_t c = 0; c < 3; ++c) {
            double mean = 0;
            for (int64_t j = 0; j < 6; ++j) mean += v[j * 3 + c] / 6;
            EXPECT_NEAR(out.value()[i * 3 + c], mean, 1e-15);
        }
}

TEST(Attention, SingleKeyReturnsValue) {
    auto rng = make_rng(5);
    const auto v = fixture::uniform({1, 4}, rng);
    const auto out = attn::attention(Var<double>::constant(fixture::uniform({1, 4}, rng)),
                                     Var<double>::constant(fixture::uniform({1, 4}, rng)), Var<double>::constant(v));
    EXPECT_EQ(out.value(), v);
}

TEST(Attention, MatchesBruteForce) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto rng = make_rng(6, seed);
        const int64_t L = 3 + int64_t(seed % 4), d = 2 + int64_t(seed % 3);
        const auto q = fixture::uniform({L, d}, rng, -2, 2), k = fixture::uniform({L, d}, rng, -2, 2),
                   v = fixture::uniform({L, d}, rng);
        const auto out = attn::attention(Var<double>::constant(q), Var<double>::constant(k), Var<double>::constant(v));
        const auto ref = oracle::attention(rows(q), rows(k), rows(v), L, d);
        for (int64_t i = 0; i < L * d; ++i) EXPECT_NEAR(out.value()[i], ref[size_t(i)], 1e-10);
    }
}

TEST(Attention, WeightsAreRowStochastic) {
    auto rng = make_rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto w = attn::attention_weights(fixture::uniform<float>({16, 8}, rng, -3, 3),
                                               fixture::uniform<float>({16, 8}, rng, -3, 3));
        for (int64_t i = 0; i < 16; ++i) {
            double s = 0;
            for (int64_t j = 0; j < 16; ++j) {
                EXPECT_GE(w[i * 16 + j], 0.0f);
                s += w[i * 16 + j];
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(Attention, PermutationEquivariance) {
    auto rng = make_rng(8);
    const int64_t L = 7, d = 3;
    const auto q = fixture::uniform({L, d}, rng), k = fixture::uniform({L, d}, rng), v = fixture::uniform({L, d}, rng),
               t = fixture::uniform({L, d}, rng);
    std::vector<int64_t> perm(L);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permute = [&](const Tensor<double>& x) {
        Tensor<double> y(x.shape());
        for (int64_t i = 0; i < L; ++i)
            for (int64_t c = 0; c < d; ++c) y[i * d + c] = x[perm[size_t(i)] * d + c];
        return y;
    };
    auto C = [](const Tensor<double>& x) { return Var<double>::constant(x); };
    const auto base = attn::attention(C(q), C(k), C(v)).value();
    const auto moved = attn::attention(C(permute(q)), C(permute(k)), C(permute(v))).value();
    EXPECT_LT(max_abs_diff(moved, permute(base)), 1e-14);
    const auto tbase = attn::tri_token_attention(C(q), C(k), C(v), C(t)).value();
    const auto tmoved = attn::tri_token_attention(C(permute(q)), C(permute(k)), C(permute(v)), C(permute(t))).value();
    EXPECT_LT(max_abs_diff(tmoved, permute(tbase)), 1e-14);
}

TEST(TriTokenAttention, ZeroTokensReduceToAttention) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto rng = make_rng(9, seed);
        auto q = Var<float>::constant(fixture::uniform<float>({16, 8}, rng));
        auto k = Var<float>::constant(fixture::uniform<float>({16, 8}, rng));
        auto v = Var<float>::constant(fixture::uniform<float>({16, 8}, rng));
        const auto a = attn::attention(q, k, v).value();
        const auto b = attn::tri_token_attention(q, k, v, Var<float>::constant(Tensor<float>({16, 8}))).value();
        for (int64_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-7);
    }
}

TEST(TriTokenAttention, IdenticalKeysGiveUniformWeights) {
    auto rng = make_rng(10);
    const auto row = fixture::uniform({1, 4}, rng);
    Tensor<double> k({4, 4});
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t c = 0; c < 4; ++c) k[i * 4 + c] = row[c];
    const auto v = fixture::uniform({4, 4}, rng);
    Tensor<double> tok({4, 4});
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t c = 0; c < 4; ++c) tok[i * 4 + c] = 5.0 * (c + 1);  // one label, large token
    const auto out = attn::tri_token_attention(Var<double>::constant(fixture::uniform({4, 4}, rng)),
                                               Var<double>::constant(k), Var<double>::constant(v),
                                               Var<double>::constant(tok));
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t c = 0; c < 4; ++c) {
            const double mean = (v[c] + v[4 + c] + v[8 + c] + v[12 + c]) / 4;
            EXPECT_NEAR(out.value()[i * 4 + c], mean, 1e-12);
        }
}

TEST(TriTokenAttention, MixedWindowMatchesBruteForce) {
    auto rng = make_rng(11);
    const int64_t d = 3;
    Trimap t(2, 2);
    t(0, 0) = TrimapLabel::FG;
    t(0, 1) = TrimapLabel::BG;
    t(1, 0) = TrimapLabel::UNK;
    t(1, 1) = TrimapLabel::UNK;
    TriTokenSet<double> set{Var<double>::leaf(fixture::uniform({3, d}, rng))};
    const auto map = ops::reshape(expand(t, set, 2, 2), {4, d});
    const auto q = fixture::uniform({4, d}, rng), k = fixture::uniform({4, d}, rng), v = fixture::uniform({4, d}, rng);
    auto qv = Var<double>::leaf(q), kv = Var<double>::leaf(k), vv = Var<double>::leaf(v);
    const auto out = attn::tri_token_attention(qv, kv, vv, map);
    const auto ref = oracle::attention(rows(q), rows(k), rows(v), 4, d, oracle::flat(map.value()));
    for (int64_t i = 0; i < 4 * d; ++i) EXPECT_NEAR(out.value()[i], ref[size_t(i)], 1e-12);
    // Gradients reach queries, keys, values and the tokens.
    ops::sum(out).backward();
    double gq = 0, gk = 0, gv = 0, gt = 0;
    for (int64_t i = 0; i < 4 * d; ++i) {
        gq += std::fabs(qv.grad()[i]);
        gk += std::fabs(kv.grad()[i]);
        gv += std::fabs(vv.grad()[i]);
    }
    for (int64_t i = 0; i < 3 * d; ++i) gt += std::fabs(set.tokens.grad()[i]);
    EXPECT_GT(gq, 0);
    EXPECT_GT(gk, 0);
    EXPECT_GT(gv, 0);
    EXPECT_GT(gt, 0);
}

TEST(TriTokenAttention, ShapeMismatchThrows) {
    auto C = [](Shape s) { return Var<double>::constant(Tensor<double>(std::move(s))); };
    EXPECT_THROW(attn::tri_token_attention(C({4, 3}), C({4, 3}), C({4, 3}), C({3, 3})), ShapeError);
}

TEST(WindowAttention, MatchesMaskedOracle) {
    struct Case {
        int64_t h, w;
        bool shifted;
        int heads;
    };
    for (const Case& cs : {Case{8, 8, false, 2}, Case{8, 8, true, 2}, Case{5, 7, false, 1}, Case{6, 6, true, 2},
                           Case{3, 4, true, 2}, Case{12, 8, true, 1}}) {
        auto rng = make_rng(12, uint64_t(cs.h * 100 + cs.w + cs.shifted));
        const auto q = fixture::uniform({2, cs.h, cs.w, 4}, rng), k = fixture::uniform({2, cs.h, cs.w, 4}, rng),
                   v = fixture::uniform({2, cs.h, cs.w, 4}, rng);
        const auto geom = attn::WindowGeometry::make(cs.h, cs.w, 4, cs.shifted);
        const auto out = attn::window_attention(Var<double>::constant(q), Var<double>::constant(k),
                                                Var<double>::constant(v), cs.heads, geom);
        const auto ref = window_attention_oracle(q, k, v, cs.heads, 4, cs.shifted);
        EXPECT_LT(max_abs_diff(out.value(), ref), 1e-12) << cs.h << "x" << cs.w << " shifted " << cs.shifted;
    }
}

TEST(TgtbBlock, ZeroInitOutputIsIdentity) {
    auto rng = make_rng(13);
    nn::ParameterSet<double> ps;
    for (bool shifted : {false, true}) {
        TgtbBlock<double> b(nn::Scope<double>{&ps, shifted ? "s" : "p", &rng}, 8, 2, 4, 4, shifted, true, false, true);
        const auto tokens = init_tokens<double>(nn::Scope<double>{&ps, shifted ? "ts" : "tp", &rng}, 8);
        const auto x = fixture::uniform({1, 8, 8, 8}, rng);
        Trimap t(8, 8, TrimapLabel::UNK);
        const auto y = b(Var<double>::constant(x), expand(t, tokens, 8, 8));
        EXPECT_EQ(y.value(), x);
    }
}

TEST(TgtbBlock, ShapePreservedAndTokensRequired) {
    auto rng = make_rng(14);
    nn::ParameterSet<float> ps;
    TgtbBlock<float> b(nn::Scope<float>{&ps, "b", &rng}, 16, 4, 4, 4, true, true, false);
    const auto tokens = init_tokens<float>(nn::Scope<float>{&ps, "t", &rng}, 16);
    for (auto [h, w] : {std::pair<int64_t, int64_t>{4, 4}, {7, 5}, {8, 12}}) {
        const auto x = Var<float>::constant(fixture::uniform<float>({2, h, w, 16}, rng));
        Trimap t(h, w, TrimapLabel::FG);
        EXPECT_EQ(b(x, expand(LabelGrid::from_trimaps({t, t}), tokens, h, w)).shape(), x.shape());
    }
    EXPECT_THROW(b(Var<float>::constant(Tensor<float>({1, 4, 4, 16})), Var<float>()), ShapeError);
}

TEST(TgtbBlock, GradientCheck) {
    const auto r = gradcheck::run("tgtb_block", {.seed = 3});
    EXPECT_TRUE(r.passed) << r.summary();
    EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(AttentionConfig, Validation) {
    AttentionConfig c;
    EXPECT_NO_THROW(c.validate());
    c.num_heads = {3, 4, 8, 8};
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.tri_token_period = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    EXPECT_TRUE(c.uses_tri_token(0));
    EXPECT_FALSE(c.uses_tri_token(4));
    EXPECT_TRUE(c.uses_tri_token(5));
}

TEST(TgtbStage, EveryFifthBlockUsesTokens) {
    auto rng = make_rng(15);
    nn::ParameterSet<float> ps;
    AttentionConfig cfg;
    cfg.embed_dims = {8, 16, 32, 64};
    cfg.num_heads = {2, 2, 2, 2};
    cfg.blocks_per_stage = {5, 11, 2, 1};
    TgtbStage<float> five(nn::Scope<float>{&ps, "a", &rng}, cfg, 0, true);
    ASSERT_EQ(five.blocks.size(), 5u);
    EXPECT_EQ(five.tri_token_blocks(), 1);
    EXPECT_TRUE(five.blocks[0].tri_token);
    TgtbStage<float> eleven(nn::Scope<float>{&ps, "b", &rng}, cfg, 1, true);
    EXPECT_EQ(eleven.tri_token_blocks(), 3);  // blocks 0, 5, 10
    EXPECT_TRUE(eleven.blocks[10].tri_token);
    TgtbStage<float> off(nn::Scope<float>{&ps, "c", &rng}, cfg, 2, false);
    EXPECT_EQ(off.tri_token_blocks(), 0);
    // Odd blocks are shifted.
    EXPECT_FALSE(eleven.blocks[0].shifted);
    EXPECT_TRUE(eleven.blocks[1].shifted);
}

TEST(TgtbStage, HalvesGridAndDoublesChannels) {
    auto rng = make_rng(16);
    nn::ParameterSet<float> ps;
    AttentionConfig cfg;
    cfg.embed_dims = {8, 16, 32, 64};
    cfg.num_heads = {2, 2, 2, 2};
    TgtbStage<float> s(nn::Scope<float>{&ps, "s", &rng}, cfg, 0, true);
    const auto x = Var<float>::constant(fixture::uniform<float>({1, 16, 16, 8}, rng));
    Var<float> pre;
    const auto y = s(x, LabelGrid::from_trimap(Trimap(16, 16, TrimapLabel::UNK)), &pre);
    EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 16}));
    EXPECT_EQ(pre.shape(), x.shape());
}
