#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "transmat/gradcheck.hpp"
#include "transmat/network.hpp"

using namespace transmat;

namespace {

NetworkConfig small_config() {
    NetworkConfig c;
    c.encoder.stem_widths = {8, 8};
    c.encoder.attention.embed_dims = {8, 16, 32, 64};
    c.encoder.attention.num_heads = {2, 2, 4, 4};
    c.encoder.attention.blocks_per_stage = {1, 1, 1, 1};
    c.decoder.widths = {32, 16, 8, 8, 8, 8};
    return c;
}

Tensor<float> input_for(const std::vector<ImageRGB>& images, const LabelGrid& labels) {
    return network_input<float>(images, labels);
}

}  // namespace

TEST(CnnLocalExtractor, StridesAndDegenerateInput) {
    auto rng = make_rng(1);
    nn::ParameterSet<float> ps;
    CnnLocalExtractor<float> ex(nn::Scope<float>{&ps, "local", &rng}, 4, {16, 32}, true);
    const auto out = ex(Var<float>::constant(Tensor<float>({1, 64, 64, 4})), false);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].shape(), (Shape{1, 32, 32, 16}));
    EXPECT_EQ(out[1].shape(), (Shape{1, 16, 16, 32}));
    // Zero input and zeroed residual branches: features are spatially constant.
    for (const auto& f : out)
        for (int64_t c = 0; c < f.dim(3); ++c)
            for (int64_t y = 0; y < f.dim(1); ++y)
                for (int64_t x = 0; x < f.dim(2); ++x) ASSERT_EQ(f.value().at(0, y, x, c), f.value().at(0, 0, 0, c));
}

TEST(CnnLocalExtractor, GradientCheck) {
    auto rng = make_rng(2);
    nn::ParameterSet<double> ps;
    CnnLocalExtractor<double> ex(nn::Scope<double>{&ps, "local", &rng}, 4, {4, 6});
    for (const auto& b : ps.buffers())
        if (b.name.ends_with("running_var")) *b.tensor = fixture::uniform(b.tensor->shape(), rng, 0.5, 1.5);
    for (const auto& p : ps.params())
        if (p.name.ends_with(".beta") || p.name.ends_with(".bias")) {
            Var<double> v = p.var;
            v.mutable_value() = fixture::uniform(v.shape(), rng, -0.2, 0.2);
        }
    auto x = Var<double>::leaf(fixture::uniform({1, 8, 8, 4}, rng));
    const auto w1 = fixture::uniform({1, 4, 4, 4}, rng), w2 = fixture::uniform({1, 2, 2, 6}, rng);
    gradcheck::Inputs inputs{{"x", x}};
    for (const auto& p : ps.params()) inputs.emplace_back(p.name, p.var);
    for (bool training : {false, true}) {
        const auto r = gradcheck::check(
            training ? "stem_train" : "stem_eval",
            [&] {
                const auto f = ex(x, training);
                return ops::add(ops::dot_const(f[0], w1), ops::dot_const(f[1], w2));
            },
            inputs, 1e-4, {});
        EXPECT_TRUE(r.passed) << r.summary();
    }
}

TEST(Encoder, DeskPyramidShapes) {
    NetworkConfig cfg;
    Network<float> net(cfg);
    auto rng = make_rng(3);
    const auto labels = LabelGrid::from_trimap(Trimap(64, 64, TrimapLabel::UNK));
    FeaturePyramid<float> p;
    const auto alpha = net.forward(input_for({fixture::random_image(64, 64, rng)}, labels), labels, false, &p);
    ASSERT_EQ(p.levels.size(), 6u);
    const auto channels = cfg.encoder.level_channels();
    const int64_t sides[] = {32, 16, 8, 4, 2, 1};
    for (size_t i = 0; i < 6; ++i) EXPECT_EQ(p.levels[i].shape(), (Shape{1, sides[i], sides[i], channels[i]}));
    EXPECT_EQ(channels, (std::vector<int64_t>{16, 32, 64, 128, 256, 512}));
    EXPECT_EQ(alpha.shape(), (Shape{1, 64, 64, 1}));
}

TEST(Encoder, ShapeLadderAtNonPowerOfTwo) {
    Network<float> net(small_config());
    auto rng = make_rng(4);
    const auto labels = LabelGrid::from_trimap(Trimap(96, 160, TrimapLabel::UNK));
    FeaturePyramid<float> p;
    const auto alpha = net.forward(input_for({fixture::random_image(96, 160, rng)}, labels), labels, false, &p);
    int64_t h = 96, w = 160;
    for (const auto& l : p.levels) {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
        EXPECT_EQ(l.dim(1), h);
        EXPECT_EQ(l.dim(2), w);
    }
    EXPECT_EQ(alpha.shape(), (Shape{1, 96, 160, 1}));
}

TEST(Encoder, RejectsIndivisibleInput) {
    Network<float> net(small_config());
    const auto labels = LabelGrid::from_trimap(Trimap(48, 64, TrimapLabel::UNK));
    EXPECT_THROW(net.forward(Tensor<float>({1, 48, 64, 4}), labels, false), ShapeError);
}

TEST(Encoder, TokenToggleKeepsShapesChangesValues) {
    auto cfg = small_config();
    auto rng = make_rng(5);
    Trimap t(64, 64, TrimapLabel::BG);
    for (int64_t y = 16; y < 48; ++y)
        for (int64_t x = 16; x < 48; ++x) t(y, x) = (y < 24 || y >= 40) ? TrimapLabel::UNK : TrimapLabel::FG;
    const auto labels = LabelGrid::from_trimap(t);
    const auto in = input_for({fixture::random_image(64, 64, rng)}, labels);
    Network<float> with(cfg);
    // Scale tokens up so their effect is visible at float precision.
    for (const auto& p : with.parameters().params())
        if (p.name.ends_with("tokens")) {
            Var<float> v = p.var;
            for (auto& x : v.mutable_value().storage()) x *= 50.0f;
        }
    cfg.encoder.use_tgtb = false;
    Network<float> without(cfg);
    FeaturePyramid<float> a, b;
    with.forward(in, labels, false, &a);
    without.forward(in, labels, false, &b);
    ASSERT_EQ(a.levels.size(), b.levels.size());
    for (size_t i = 0; i < a.levels.size(); ++i) EXPECT_EQ(a.levels[i].shape(), b.levels[i].shape());
    EXPECT_EQ(a.levels[1].value(), b.levels[1].value());  // CNN levels untouched
    EXPECT_NE(a.levels[3].value(), b.levels[3].value());
}

TEST(Encoder, BatchIndependenceInEvalMode) {
    Network<float> net(small_config());
    auto rng = make_rng(6);
    std::vector<ImageRGB> images;
    std::vector<Trimap> trimaps;
    for (int i = 0; i < 3; ++i) {
        images.push_back(fixture::random_image(32, 32, rng));
        Trimap t(32, 32, TrimapLabel::UNK);
        t(i, i) = TrimapLabel::FG;
        trimaps.push_back(t);
    }
    const auto labels = LabelGrid::from_trimaps(trimaps);
    const auto permuted = LabelGrid::from_trimaps({trimaps[2], trimaps[0], trimaps[1]});
    FeaturePyramid<float> a, b;
    const auto alpha_a = net.forward(input_for(images, labels), labels, false, &a);
    const auto alpha_b = net.forward(input_for({images[2], images[0], images[1]}, permuted), permuted, false, &b);
    const int64_t per = alpha_a.value().size() / 3;
    const int src[] = {2, 0, 1};
    for (int i = 0; i < 3; ++i)
        for (int64_t j = 0; j < per; ++j) ASSERT_EQ(alpha_b.value()[i * per + j], alpha_a.value()[src[i] * per + j]);
    for (size_t l = 0; l < a.levels.size(); ++l) {
        const int64_t n = a.levels[l].value().size() / 3;
        for (int i = 0; i < 3; ++i)
            for (int64_t j = 0; j < n; ++j) ASSERT_EQ(b.levels[l].value()[i * n + j], a.levels[l].value()[src[i] * n + j]);
    }
}

TEST(Encoder, DeterministicForward) {
    Network<float> a(small_config()), b(small_config());
    auto rng = make_rng(7);
    const auto labels = LabelGrid::from_trimap(Trimap(32, 32, TrimapLabel::UNK));
    const auto in = input_for({fixture::random_image(32, 32, rng)}, labels);
    EXPECT_EQ(a.forward(in, labels, false).value(), b.forward(in, labels, false).value());
    EXPECT_EQ(a.forward(in, labels, false).value(), a.forward(in, labels, false).value());
}

TEST(EncoderConfig, Validation) {
    EncoderConfig c;
    EXPECT_NO_THROW(c.validate());
    c.tri_token_stages = {0};
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.tri_token_stages = {5};
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.tri_token_stages = {2};
    EXPECT_FALSE(c.stage_has_tokens(0));
    EXPECT_TRUE(c.stage_has_tokens(1));
    c.use_tgtb = false;
    EXPECT_FALSE(c.stage_has_tokens(1));
}

TEST(FullModel, GradientCheckAtToyScale) {
    const auto r = gradcheck::run("full_model_toy", {.seed = 0});
    EXPECT_TRUE(r.passed) << r.summary();
    EXPECT_LE(r.max_rel_error, 1e-3);
}
