#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "transmat/data.hpp"
#include "transmat/gradcheck.hpp"
#include "transmat/losses.hpp"
#include "transmat/synthetic.hpp"

using namespace transmat;

namespace {

Var<double> C(const Tensor<double>& t) { return Var<double>::constant(t); }

Tensor<double> ones(Shape s) { return Tensor<double>(std::move(s), 1.0); }

double scalar(const Var<double>& v) { return v.value()[0]; }

}  // namespace

TEST(AlphaLoss, IdentityAndOffset) {
    auto rng = make_rng(1);
    const auto gt = fixture::uniform({1, 4, 4, 1}, rng, 0.1, 0.8);
    Tensor<double> region({1, 4, 4, 1});
    for (int64_t i = 0; i < 16; i += 2) region[i] = 1;
    EXPECT_EQ(scalar(loss::alpha_loss(C(gt), gt, region)), 0.0);
    auto pred = gt;
    for (auto& v : pred.storage()) v += 0.1;
    EXPECT_NEAR(scalar(loss::alpha_loss(C(pred), gt, region)), 0.1, 1e-15);
}

TEST(AlphaLoss, MatchesNaiveOracleAndRejectsEmptyRegion) {
    auto rng = make_rng(2);
    const auto p = fixture::uniform({2, 4, 4, 1}, rng, 0, 1), g = fixture::uniform({2, 4, 4, 1}, rng, 0, 1);
    Tensor<double> region({2, 4, 4, 1});
    std::bernoulli_distribution b(0.5);
    for (auto& v : region.storage()) v = b(rng);
    double s = 0, n = 0;
    for (int64_t i = 0; i < p.size(); ++i)
        if (region[i] != 0) {
            s += std::fabs(p[i] - g[i]);
            n += 1;
        }
    EXPECT_NEAR(scalar(loss::alpha_loss(C(p), g, region)), s / n, 1e-15);
    EXPECT_THROW(loss::alpha_loss(C(p), g, Tensor<double>(region.shape())), NoUnknownRegionError);
}

TEST(CompositionLoss, GroundTruthOnSynthesizedSample) {
    synthetic::SyntheticConfig cfg;
    for (int64_t i = 0; i < 4; ++i) {
        const auto s = synthetic::make_sample(cfg, i);
        EXPECT_LE(loss::composition_loss(s.gt_alpha, s), 1e-6);
    }
}

TEST(CompositionLoss, EqualForegroundAndBackground) {
    auto rng = make_rng(3);
    const auto fb = fixture::uniform({1, 4, 4, 3}, rng, 0, 1);
    const auto pred = fixture::uniform({1, 4, 4, 1}, rng, 0, 1);
    EXPECT_NEAR(scalar(loss::composition_loss(C(pred), fb, fb, fb, ones({1, 4, 4, 1}))), 0.0, 1e-15);
}

TEST(CompositionLoss, MatchesRecompositionOracle) {
    auto rng = make_rng(4);
    const auto f = fixture::uniform({1, 5, 3, 3}, rng, 0, 1), b = fixture::uniform({1, 5, 3, 3}, rng, 0, 1),
               im = fixture::uniform({1, 5, 3, 3}, rng, 0, 1), p = fixture::uniform({1, 5, 3, 1}, rng, 0, 1);
    Tensor<double> region({1, 5, 3, 1});
    for (int64_t i = 0; i < 15; i += 3) region[i] = 1;
    double s = 0;
    int n = 0;
    for (int64_t i = 0; i < 15; ++i) {
        if (region[i] == 0) continue;
        for (int c = 0; c < 3; ++c) {
            const double comp = p[i] * f[i * 3 + c] + (1 - p[i]) * b[i * 3 + c];
            s += std::fabs(comp - im[i * 3 + c]);
            ++n;
        }
    }
    EXPECT_NEAR(scalar(loss::composition_loss(C(p), f, b, im, region)), s / n, 1e-15);
}

TEST(CompositionLoss, MissingPlanesThrow) {
    auto s = synthetic::make_sample({}, 0);
    s.gt_foreground = ImageRGB();
    EXPECT_THROW(loss::Targets<float>::from_samples({s}), DataError);
    EXPECT_THROW(loss::composition_loss(s.gt_alpha, s), DataError);
}

TEST(LaplacianLoss, LevelCountRule) {
    EXPECT_EQ(loss::laplacian_levels(16, 16), 4);
    EXPECT_EQ(loss::laplacian_levels(64, 64), 5);
    EXPECT_EQ(loss::laplacian_levels(64, 20), 4);
    EXPECT_EQ(loss::laplacian_levels(1, 9), 1);
    auto rng = make_rng(5);
    const auto p = fixture::uniform({1, 16, 16, 1}, rng, 0, 1), g = fixture::uniform({1, 16, 16, 1}, rng, 0, 1);
    EXPECT_EQ(loss::laplacian_pyramid(p, loss::laplacian_levels(16, 16)).size(), 4u);
    EXPECT_NO_THROW(loss::laplacian_loss(C(p), g, Tensor<double>()));
}

TEST(LaplacianLoss, IdenticalInputsGiveZero) {
    auto rng = make_rng(6);
    const auto g = fixture::uniform({2, 16, 16, 1}, rng, 0, 1);
    EXPECT_EQ(scalar(loss::laplacian_loss(C(g), g, Tensor<double>())), 0.0);
}

TEST(LaplacianLoss, ConstantOffsetLandsInResidual) {
    auto rng = make_rng(7);
    const auto g = fixture::uniform({1, 16, 16, 1}, rng, 0, 0.5);
    auto p = g;
    for (auto& v : p.storage()) v += 0.25;
    const double got = scalar(loss::laplacian_loss(C(p), g, ones(g.shape())));
    const double ref = oracle::laplacian_loss(oracle::flat(p), oracle::flat(g), {}, 16, 16, 4);
    EXPECT_NEAR(got, ref, 1e-12);
    EXPECT_NEAR(got, std::pow(2.0, 3) * 0.25, 1e-12);  // band levels carry nothing
    const auto bands_p = loss::laplacian_pyramid(p, 4), bands_g = loss::laplacian_pyramid(g, 4);
    for (int k = 0; k < 3; ++k)
        for (int64_t i = 0; i < bands_p[size_t(k)].size(); ++i)
            EXPECT_NEAR(bands_p[size_t(k)][i], bands_g[size_t(k)][i], 1e-12);
}

TEST(LaplacianLoss, MatchesPyramidOracle) {
    for (auto [h, w] : {std::pair<int64_t, int64_t>{16, 16}, {32, 20}, {13, 18}, {64, 64}}) {
        auto rng = make_rng(8, uint64_t(h * w));
        const auto p = fixture::uniform({1, h, w, 1}, rng, 0, 1), g = fixture::uniform({1, h, w, 1}, rng, 0, 1);
        Tensor<double> m({1, h, w, 1});
        std::bernoulli_distribution b(0.6);
        for (auto& v : m.storage()) v = b(rng);
        const int levels = loss::laplacian_levels(h, w);
        EXPECT_NEAR(scalar(loss::laplacian_loss(C(p), g, m)),
                    oracle::laplacian_loss(oracle::flat(p), oracle::flat(g), oracle::flat(m), h, w, levels), 1e-12)
            << h << "x" << w;
        const auto pyr = loss::laplacian_pyramid(p, levels);
        const auto ref = oracle::laplacian_pyramid(oracle::flat(p), h, w, levels);
        for (int k = 0; k < levels; ++k)
            for (int64_t i = 0; i < pyr[size_t(k)].size(); ++i)
                ASSERT_NEAR(pyr[size_t(k)][i], ref[size_t(k)][size_t(i)], 1e-12);
    }
}

TEST(LaplacianLoss, UnknownMaskToggle) {
    auto s = synthetic::make_sample({}, 2);
    auto pred = s.gt_alpha;
    for (auto& v : pred.storage()) v = std::min(1.0f, v + 0.2f);
    const double masked = loss::laplacian_loss(pred, s.gt_alpha, s.trimap, true);
    const double full = loss::laplacian_loss(pred, s.gt_alpha, s.trimap, false);
    EXPECT_GT(masked, 0);
    EXPECT_GT(full, masked);
}

TEST(TotalLoss, WeightArithmetic) {
    EXPECT_DOUBLE_EQ(loss::total_loss(1, 1, 1), 1.76);
    EXPECT_EQ(loss::total_loss(0, 0, 0), 0.0);
    EXPECT_DOUBLE_EQ(loss::total_loss(2, 0, 0), 0.8);
    // Linear in each component.
    const loss::LossWeights w{0.3, 0.7, 1.9};
    EXPECT_NEAR(loss::total_loss(2, 3, 5, w) - loss::total_loss(1, 3, 5, w), 0.3, 1e-15);
    EXPECT_NEAR(loss::total_loss(2, 4, 5, w) - loss::total_loss(2, 3, 5, w), 0.7, 1e-15);
    EXPECT_NEAR(loss::total_loss(2, 4, 6, w) - loss::total_loss(2, 4, 5, w), 1.9, 1e-14);
    loss::LossWeights bad;
    bad.comp = -1;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Losses, NonNegativeAndZeroOnEquality) {
    auto rng = make_rng(9);
    synthetic::SyntheticConfig cfg;
    cfg.height = cfg.width = 32;
    const auto s = synthetic::make_sample(cfg, 3);
    const auto t = loss::Targets<double>::from_samples({s});
    const auto exact = loss::compute(Var<double>::constant(t.alpha), t);
    EXPECT_EQ(scalar(exact.alpha), 0.0);
    EXPECT_LE(scalar(exact.comp), 1e-6);
    EXPECT_EQ(scalar(exact.lap), 0.0);
    for (int trial = 0; trial < 10; ++trial) {
        const auto terms = loss::compute(Var<double>::constant(fixture::uniform(t.alpha.shape(), rng, 0, 1)), t);
        EXPECT_GT(scalar(terms.alpha), 0);
        EXPECT_GT(scalar(terms.comp), 0);
        EXPECT_GT(scalar(terms.lap), 0);
        EXPECT_NEAR(scalar(terms.total), loss::total_loss(scalar(terms.alpha), scalar(terms.comp), scalar(terms.lap)),
                    1e-12);
    }
}

TEST(Losses, GradientCheck) {
    for (uint64_t seed : {0, 1, 2}) {
        const auto r = gradcheck::run("losses", {.seed = seed});
        EXPECT_TRUE(r.passed) << r.summary();
    }
}
