#include <gtest/gtest.h>

#include <torch/torch.h>

#include "../oracles.hpp"
#include "mactok/alignment.hpp"
#include "mactok/error.hpp"

using namespace mactok;

TEST(Expand, BlockRepetition) {
    auto z = torch::arange(4, torch::kFloat32).reshape({1, 4, 1});
    auto e = expand(z, 4).flatten();
    for (int j = 0; j < 16; ++j) EXPECT_EQ(e[j].item<float>(), static_cast<float>(j / 4));
    auto r = torch::randn({2, 5, 3});
    EXPECT_TRUE(torch::equal(expand(r, 1), r));
}

TEST(Expand, FactorMustDivide) {
    EXPECT_EQ(expansion_factor(256, 64), 4);
    EXPECT_THROW(expansion_factor(100, 64), ConfigError);
    EXPECT_THROW(expand(torch::zeros({1, 2, 2}), 0), ConfigError);
}

TEST(Expand, BlockMeanRecoversInput) {
    for (int64_t r = 1; r <= 16; ++r) {
        auto z = torch::randn({3, 4, 5}, torch::kFloat64);
        auto e = expand(z, r).contiguous();
        auto back = oracle::block_mean({e.data_ptr<double>(), e.data_ptr<double>() + e.numel()}, 3, 4 * r, 5, r);
        EXPECT_EQ(back, std::vector<double>(z.data_ptr<double>(), z.data_ptr<double>() + z.numel())) << "r=" << r;
    }
}

TEST(Pool, MeanOverTokens) {
    auto v = torch::randn({1, 1, 4});
    EXPECT_TRUE(torch::allclose(pool_global(v.expand({1, 6, 4})), v[0], 0, 1e-6));
    auto u = torch::randn({1, 1, 3});
    EXPECT_TRUE(torch::allclose(pool_global(torch::cat({u, -u}, 1)), torch::zeros({1, 3}), 0, 1e-7));
    auto z = torch::randn({1, 8, 4}, torch::kFloat64);
    auto acc = z.accessor<double, 3>();
    auto p = pool_global(z);
    for (int c = 0; c < 4; ++c) {
        double s = 0;
        for (int l = 0; l < 8; ++l) s += acc[0][l][c];
        EXPECT_NEAR(p[0][c].item<double>(), s / 8, 1e-14);
    }
}

TEST(AlignmentLoss, PerfectOrthogonalAndMixed) {
    auto p = torch::randn({2, 5, 6});
    auto c = torch::randn({2, 6});
    EXPECT_NEAR(alignment_loss_from_projections(p, c, p, c).loss.item<double>(), -1.0, 1e-6);

    auto e0 = torch::tensor({1.0f, 0.0f});
    auto e1 = torch::tensor({0.0f, 1.0f});
    auto targets = torch::stack({e0, e0}).unsqueeze(0);
    auto ortho = torch::stack({e1, e1}).unsqueeze(0);
    EXPECT_NEAR(alignment_loss_from_projections(ortho, e1.unsqueeze(0), targets, e0.unsqueeze(0)).loss.item<double>(),
                0.0, 1e-7);

    auto mixed = torch::stack({e0, e1}).unsqueeze(0);
    EXPECT_NEAR(alignment_loss_from_projections(mixed, e0.unsqueeze(0), targets, e0.unsqueeze(0)).loss.item<double>(),
                -2.0 / 3.0, 1e-6);
}

TEST(AlignmentLoss, ZeroNormCountsAndYieldsZero) {
    auto targets = torch::ones({1, 2, 3});
    auto o = torch::zeros({1, 2, 3});
    auto r = alignment_loss_from_projections(o, torch::ones({1, 3}), targets, torch::ones({1, 3}));
    EXPECT_EQ(r.zero_norm_pairs, 2);
    EXPECT_NEAR(r.loss.item<double>(), -1.0 / 3.0, 1e-6);
}

TEST(AlignmentLoss, BoundedOnRandomInstances) {
    torch::manual_seed(0);
    for (int t = 0; t < 200; ++t) {
        auto r = alignment_loss_from_projections(torch::randn({2, 4, 3}), torch::randn({2, 3}), torch::randn({2, 4, 3}),
                                                 torch::randn({2, 3}))
                     .loss.item<double>();
        EXPECT_GE(r, -1.0);
        EXPECT_LE(r, 1.0);
    }
}

TEST(AlignmentLoss, InvariantToPositiveRescaling) {
    torch::manual_seed(1);
    auto ol = torch::randn({2, 4, 3}, torch::kFloat64), og = torch::randn({2, 3}, torch::kFloat64);
    auto p = torch::randn({2, 4, 3}, torch::kFloat64), c = torch::randn({2, 3}, torch::kFloat64);
    auto base = alignment_loss_from_projections(ol, og, p, c).loss.item<double>();
    auto s1 = torch::rand({2, 4, 1}, torch::kFloat64) * 10 + 0.01;
    auto s2 = torch::rand({2, 1}, torch::kFloat64) * 10 + 0.01;
    auto scaled = alignment_loss_from_projections(ol * s1, og * s2, p * s1.flip(0), c * 3.0).loss.item<double>();
    EXPECT_NEAR(scaled, base, 1e-12);
}

TEST(AlignmentLoss, HeadsShapeAndMismatch) {
    torch::manual_seed(2);
    AlignmentHeads heads(8, 16);
    FeatureBundle f{torch::randn({2, 16}), torch::randn({2, 16, 16}), {4, 4}};
    auto r = alignment_loss(torch::randn({2, 4, 8}), f, heads);
    EXPECT_EQ(r.loss.dim(), 0);
    FeatureBundle bad{torch::randn({2, 16}), torch::randn({2, 10, 16}), {2, 5}};
    EXPECT_THROW(alignment_loss(torch::randn({2, 4, 8}), bad, heads), ConfigError);
}

TEST(AlignmentLoss, GradientMatchesFiniteDifferences) {
    torch::manual_seed(3);
    AlignmentHeads heads(3, 5);
    heads->to(torch::kFloat64);
    FeatureBundle f{torch::randn({2, 5}, torch::kFloat64), torch::randn({2, 4, 5}, torch::kFloat64), {2, 2}};
    auto z = torch::randn({2, 2, 3}, torch::kFloat64).requires_grad_(true);
    alignment_loss(z, f, heads).loss.backward();
    auto g = z.grad().contiguous();
    std::vector<double> analytic(g.data_ptr<double>(), g.data_ptr<double>() + g.numel());
    torch::NoGradGuard ng;
    auto zc = z.detach().contiguous();
    std::vector<double> x(zc.data_ptr<double>(), zc.data_ptr<double>() + zc.numel());
    auto fn = [&](const std::vector<double>& v) {
        return alignment_loss(torch::tensor(v, torch::kFloat64).reshape({2, 2, 3}), f, heads).loss.item<double>();
    };
    EXPECT_LT(oracle::relative_error(analytic, oracle::finite_difference(fn, x)), 1e-4);
}
