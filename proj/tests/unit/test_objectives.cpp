#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <torch/torch.h>

#include "../oracles.hpp"
#include "../support.hpp"
#include "mactok/error.hpp"
#include "mactok/objectives.hpp"
#include "mactok/training.hpp"

using namespace mactok;

namespace {

LatentPosterior scalar_posterior(double mu, double var) {
    return {torch::full({1, 1, 1}, mu, torch::kFloat64), torch::full({1, 1, 1}, std::log(var), torch::kFloat64)};
}

class ConstantHook : public AdversarialHook {
public:
    torch::Tensor generator_loss(const ImageBatch& xhat) override {
        return torch::ones({}, xhat.pixels.options().requires_grad(false));
    }
};

class ThrowingHook : public AdversarialHook {
public:
    torch::Tensor generator_loss(const ImageBatch&) override { throw std::runtime_error("discriminator exploded"); }
};

}  // namespace

TEST(Recon, ZeroAndConstantOffset) {
    auto x = test::random_images(2, 8, 8, 1);
    EXPECT_EQ(recon_loss(x, x).item<double>(), 0.0);
    EXPECT_NEAR(recon_loss(ImageBatch{x.pixels + 0.5f}, x).item<double>(), 0.5, 1e-6);
    EXPECT_THROW(recon_loss(test::random_images(1, 8, 8, 1), x), ShapeError);
}

TEST(Recon, MatchesDirectSum) {
    auto a = test::random_images(2, 4, 4, 2), b = test::random_images(2, 4, 4, 3);
    auto pa = a.pixels.to(torch::kFloat64).contiguous(), pb = b.pixels.to(torch::kFloat64).contiguous();
    double s = 0;
    for (int64_t i = 0; i < pa.numel(); ++i) s += std::abs(pa.data_ptr<double>()[i] - pb.data_ptr<double>()[i]);
    EXPECT_NEAR(recon_loss(a, b).item<double>(), s / static_cast<double>(pa.numel()), 1e-6);
}

TEST(Kl, ClosedFormExamples) {
    LatentPosterior prior{torch::zeros({2, 3, 4}), torch::zeros({2, 3, 4})};
    EXPECT_EQ(kl_loss(prior).total.item<double>(), 0.0);
    LatentPosterior shifted{torch::ones({1, 1, 4}), torch::zeros({1, 1, 4})};
    EXPECT_NEAR(kl_loss(shifted).total.item<double>(), 2.0, 1e-7);
    EXPECT_NEAR(kl_loss(scalar_posterior(0.5, 0.25)).total.item<double>(), 0.4431, 5e-5);
    EXPECT_NEAR(kl_loss(scalar_posterior(0.5, 0.25)).total.item<double>(), oracle::kl_quadrature(0.5, 0.25), 1e-6);
}

TEST(Kl, SumOverElementsMeanOverBatchAndPerDim) {
    auto mu = torch::randn({3, 4, 5}, torch::kFloat64), lv = torch::randn({3, 4, 5}, torch::kFloat64);
    auto terms = kl_loss({mu, lv});
    auto elem = -0.5 * (1 + lv - mu * mu - lv.exp());
    EXPECT_NEAR(terms.total.item<double>(), elem.sum().item<double>() / 3, 1e-10);
    EXPECT_EQ(terms.per_dim.sizes(), (std::vector<int64_t>{5}));
    EXPECT_NEAR(terms.per_dim[2].item<double>(), elem.select(2, 2).mean().item<double>(), 1e-12);
}

TEST(Kl, NonnegativeOnRandomInputs) {
    torch::manual_seed(0);
    for (int t = 0; t < 50; ++t) {
        auto mu = torch::randn({2, 4, 8}) * 5, lv = torch::randn({2, 4, 8}) * 5;
        auto elem = kl_loss({mu, lv}).per_dim;
        EXPECT_GE(elem.min().item<double>(), 0.0);
    }
}

TEST(Kl, GradientMatchesFiniteDifferences) {
    auto mu = torch::randn({2, 3, 2}, torch::kFloat64), lv = torch::randn({2, 3, 2}, torch::kFloat64);
    auto g = kl_loss_gradient({mu, lv});
    std::vector<double> analytic;
    for (auto* t : {&g.mu, &g.logvar}) {
        auto c = t->contiguous();
        analytic.insert(analytic.end(), c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
    }
    std::vector<double> x;
    for (auto* t : {&mu, &lv}) {
        auto c = t->contiguous();
        x.insert(x.end(), c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
    }
    auto f = [](const std::vector<double>& v) {
        auto all = torch::tensor(v, torch::kFloat64);
        return kl_loss({all.slice(0, 0, 12).reshape({2, 3, 2}), all.slice(0, 12).reshape({2, 3, 2})})
            .total.item<double>();
    };
    EXPECT_LT(oracle::relative_error(analytic, oracle::finite_difference(f, x)), 1e-4);
}

TEST(Percep, ZeroSymmetricAndBruteForce) {
    StubBackbone stub(4, 6, 0);
    auto a = test::random_images(2, 8, 8, 1), b = test::random_images(2, 8, 8, 2);
    EXPECT_EQ(percep_loss(a, a, stub).item<double>(), 0.0);
    EXPECT_EQ(percep_loss(a, b, stub).item<double>(), percep_loss(b, a, stub).item<double>());

    // Features by explicit loops over patch pixels.
    auto w = stub.weight().to(torch::kFloat64);
    auto feats = [&](const ImageBatch& img, int64_t n, int64_t patch) {
        std::vector<double> out(7 * 6, 0.0);  // row 0: cls, rows 1..4: patches
        for (int64_t pr = 0; pr < 2; ++pr)
            for (int64_t pc = 0; pc < 2; ++pc)
                for (int64_t d = 0; d < 6; ++d) {
                    double acc = 0;
                    int64_t k = 0;
                    for (int64_t y = 0; y < patch; ++y)
                        for (int64_t x = 0; x < patch; ++x)
                            for (int c = 0; c < 3; ++c, ++k)
                                acc += img.pixels[n][pr * patch + y][pc * patch + x][c].item<double>() *
                                       w[k][d].item<double>();
                    out[static_cast<size_t>((1 + pr * 2 + pc) * 6 + d)] = acc;
                    out[static_cast<size_t>(d)] += acc / 4;
                }
        return out;
    };
    double s = 0;
    for (int64_t n = 0; n < 2; ++n) {
        auto fa = feats(a, n, 4), fb = feats(b, n, 4);
        for (size_t i = 0; i < 30; ++i) s += (fa[i] - fb[i]) * (fa[i] - fb[i]);
    }
    EXPECT_NEAR(percep_loss(a, b, stub).item<double>(), s / 60.0, 1e-5);
}

TEST(Adversarial, DefaultHookIsZeroAndInactive) {
    AdversarialHook hook;
    auto x = test::random_images(1, 8, 8, 0);
    EXPECT_EQ(hook.generator_loss(x).item<double>(), 0.0);
    EXPECT_FALSE(hook.active());
}

TEST(Adversarial, WeightedContributionInTraining) {
    auto cfg = test::tiny_config();
    cfg.weights = {0.0, 0.2, 0.0, 0.0};
    Trainer trainer(cfg, nullptr, std::make_shared<ConstantHook>());
    auto batch = test::random_images(4, 16, 16, 1);
    auto r = trainer.train_step(batch);
    EXPECT_EQ(r.adv, 1.0);
    EXPECT_NEAR(r.total - r.recon, 0.2, 1e-12);
}

TEST(Adversarial, ThrowingHookRaisesLabeledError) {
    auto cfg = test::tiny_config();
    cfg.weights.adv = 0.2;
    Trainer trainer(cfg, nullptr, std::make_shared<ThrowingHook>());
    try {
        trainer.train_step(test::random_images(4, 16, 16, 1));
        FAIL() << "expected an adversarial hook error";
    } catch (const AdversarialHookError& e) {
        EXPECT_NE(std::string(e.what()).find("adversarial hook"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("discriminator exploded"), std::string::npos);
    }
}

TEST(Composite, WorkedExample) {
    auto r = composite({1.0, 0.5, 0.0, 100.0, -0.8}, LossWeights{});
    EXPECT_NEAR(r.total, 1.4201, 1e-12);
}

TEST(Composite, ZeroPartsAndZeroWeights) {
    EXPECT_EQ(composite({}, LossWeights{}).total, 0.0);
    EXPECT_EQ(composite({0.7, 3.0, 2.0, 50.0, -1.0}, {0.0, 0.0, 0.0, 0.0}).total, 0.7);
}

TEST(Composite, IdentityIsExactOnRandomParts) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-10, 10), w(0, 2);
    for (int t = 0; t < 1000; ++t) {
        LossParts p{u(rng), u(rng), u(rng), u(rng) * 100, u(rng)};
        LossWeights lw{w(rng), w(rng), w(rng), w(rng)};
        const double expect = p.recon + lw.percep * p.percep + lw.adv * p.adv + lw.kl * p.kl + lw.ra * p.ra;
        ASSERT_EQ(composite(p, lw).total, expect);
    }
}

TEST(Composite, NonFiniteNamesTerm) {
    try {
        composite({1.0, 0.0, 0.0, std::nan(""), 0.0}, LossWeights{});
        FAIL();
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.term(), "kl loss");
    }
}

TEST(Composite, ActiveFractionThreshold) {
    auto r = composite({}, LossWeights{}, {0.0, 0.005, 0.011, 2.0});
    EXPECT_EQ(r.active_dim_fraction, 0.5);
    EXPECT_EQ(active_dim_fraction({}), 0.0);
}

TEST(Composite, TensorFormMatchesScalar) {
    LossWeights w;
    auto t = [](double v) { return torch::tensor(v, torch::kFloat64); };
    auto total = composite_tensor(t(1.0), t(0.5), t(0.0), t(100.0), t(-0.8), w).item<double>();
    EXPECT_EQ(total, composite({1.0, 0.5, 0.0, 100.0, -0.8}, w).total);
}

TEST(Composite, CsvRowColumns) {
    LossReport r;
    r.step = 3;
    r.strategy = "mixed";
    EXPECT_EQ(loss_csv_header(), "step,total,recon,percep,adv,kl,ra,kl_per_dim_mean,active_dim_fraction,mask_ratio,strategy");
    auto row = loss_csv_row(r);
    EXPECT_EQ(std::count(row.begin(), row.end(), ','), 10);
    EXPECT_EQ(row.rfind("3,", 0), 0u);
}
