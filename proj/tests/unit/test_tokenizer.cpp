#include <gtest/gtest.h>

#include <cmath>

#include <torch/torch.h>

#include "../oracles.hpp"
#include "../support.hpp"
#include "mactok/data.hpp"
#include "mactok/error.hpp"
#include "mactok/tokenizer.hpp"
#include "mactok/training.hpp"

using namespace mactok;

namespace {

TokenizerConfig small(int64_t image = 16, int64_t patch = 4, int64_t latents = 8) {
    TokenizerConfig c;
    c.image_size = image;
    c.patch_size = patch;
    c.width = 32;
    c.encoder_depth = 2;
    c.decoder_depth = 2;
    c.heads = 4;
    c.mlp_ratio = 2;
    c.latent_tokens = latents;
    c.latent_dim = 32;
    c.feature_dim = 16;
    return c;
}

}  // namespace

TEST(Encoder, PosteriorShapes) {
    torch::manual_seed(0);
    auto cfg = small(32, 4, 64);
    Encoder enc(cfg);
    auto post = enc->encode(enc->embed(test::random_images(2, 32, 32, 1)));
    EXPECT_EQ(post.mu.sizes(), (std::vector<int64_t>{2, 64, 32}));
    EXPECT_EQ(post.logvar.sizes(), (std::vector<int64_t>{2, 64, 32}));
}

TEST(Encoder, WrongImageSizeIsShapeError) {
    Encoder enc(small());
    EXPECT_THROW(enc->embed(test::random_images(1, 8, 8, 0)), ShapeError);
}

TEST(Encoder, LatentQueryPermutationPermutesPosterior) {
    torch::manual_seed(1);
    auto cfg = small();
    Encoder enc(cfg);
    torch::NoGradGuard ng;
    auto img = test::random_images(2, 16, 16, 2);
    auto base = enc->encode(enc->embed(img));
    auto perm = torch::randperm(cfg.latent_tokens, torch::kLong);
    enc->latent_queries.copy_(enc->latent_queries.index_select(0, perm));
    enc->latent_pos.copy_(enc->latent_pos.index_select(0, perm));
    auto permuted = enc->encode(enc->embed(img));
    EXPECT_TRUE(torch::allclose(permuted.mu, base.mu.index_select(1, perm), 1e-5, 1e-5));
    EXPECT_TRUE(torch::allclose(permuted.logvar, base.logvar.index_select(1, perm), 1e-5, 1e-5));
}

TEST(Encoder, ZeroHeadGivesStandardPosterior) {
    Encoder enc(small());
    enc->zero_head();
    auto post = enc->encode(enc->embed(test::random_images(2, 16, 16, 3)));
    EXPECT_TRUE(torch::equal(post.mu, torch::zeros_like(post.mu)));
    EXPECT_TRUE(torch::equal(post.logvar, torch::zeros_like(post.logvar)));
}

TEST(Encoder, LogvarClampFloorCollapsesNoise) {
    auto cfg = small();
    Encoder enc(cfg);
    enc->zero_head();
    {
        torch::NoGradGuard ng;
        for (auto& p : enc->named_parameters())
            if (p.key() == "head.bias") p.value().slice(0, cfg.latent_dim).fill_(-1000.0);
    }
    auto post = enc->encode(enc->embed(test::random_images(1, 16, 16, 4)));
    EXPECT_EQ(post.logvar.min().item<double>(), kLogvarMin);
    auto eps = torch::randn_like(post.mu);
    auto z = reparameterize(post, eps);
    EXPECT_TRUE(((z - post.mu).abs() <= std::exp(-15.0) * eps.abs() + 1e-12).all().item<bool>());
}

TEST(Reparameterize, ScaleAndShift) {
    auto eps = torch::randn({2, 3, 4}, torch::kFloat64);
    LatentPosterior unit{torch::zeros({2, 3, 4}, torch::kFloat64), torch::zeros({2, 3, 4}, torch::kFloat64)};
    EXPECT_TRUE(torch::equal(reparameterize(unit, eps), eps));
    LatentPosterior shifted{torch::ones({2, 3, 4}, torch::kFloat64),
                            torch::full({2, 3, 4}, std::log(4.0), torch::kFloat64)};
    EXPECT_TRUE(torch::allclose(reparameterize(shifted, eps), 1.0 + 2.0 * eps, 0.0, 1e-12));
    EXPECT_THROW(reparameterize(unit, torch::zeros({2, 3, 5})), ShapeError);
}

TEST(Decoder, OutputShapeAndDeterminism) {
    torch::manual_seed(2);
    auto cfg = small(32, 16, 4);
    Decoder dec(cfg);
    auto z = torch::randn({2, 4, 32});
    auto a = dec->decode(z);
    EXPECT_EQ(a.pixels.sizes(), (std::vector<int64_t>{2, 32, 32, 3}));
    EXPECT_TRUE(torch::equal(a.pixels, dec->decode(z).pixels));
    EXPECT_THROW(dec->decode(torch::randn({2, 5, 32})), ShapeError);
}

TEST(Decoder, GradientMatchesFiniteDifferences) {
    torch::manual_seed(3);
    auto cfg = small(8, 4, 2);
    cfg.latent_dim = 3;
    Decoder dec(cfg);
    dec->to(torch::kFloat64);
    auto target = torch::randn({1, 8, 8, 3}, torch::kFloat64);
    auto z = torch::randn({1, 2, 3}, torch::kFloat64).requires_grad_(true);
    auto loss = (dec->decode(z).pixels - target).pow(2).mean();
    loss.backward();
    auto g = z.grad().contiguous();
    std::vector<double> analytic(g.data_ptr<double>(), g.data_ptr<double>() + g.numel());

    torch::NoGradGuard ng;
    auto zc = z.detach().clone().contiguous();
    std::vector<double> x(zc.data_ptr<double>(), zc.data_ptr<double>() + zc.numel());
    auto f = [&](const std::vector<double>& v) {
        auto t = torch::tensor(v, torch::kFloat64).reshape({1, 2, 3});
        return (dec->decode(t).pixels - target).pow(2).mean().item<double>();
    };
    EXPECT_LT(oracle::relative_error(analytic, oracle::finite_difference(f, x)), 1e-4);
}

TEST(MacTok, ExtremeImagesStayFinite) {
    MacTok model(small());
    torch::NoGradGuard ng;
    for (float v : {-1e6f, 1e6f, 0.0f}) {
        auto img = ImageBatch{torch::full({2, 16, 16, 3}, v)};
        img.pixels[0][0][0][0] = -v;
        auto post = model->encoder->encode(model->encoder->embed(img));
        EXPECT_TRUE(torch::isfinite(post.mu).all().item<bool>());
        EXPECT_TRUE(torch::isfinite(post.logvar).all().item<bool>());
        EXPECT_LE(post.logvar.max().item<double>(), kLogvarMax);
        EXPECT_GE(post.logvar.min().item<double>(), kLogvarMin);
        auto z = reparameterize(post, torch::randn_like(post.mu));
        EXPECT_TRUE(torch::isfinite(model->decoder->decode(z).pixels).all().item<bool>());
    }
}

TEST(MacTok, FixedNoiseForwardIsDeterministic) {
    torch::manual_seed(4);
    MacTok model(small());
    auto img = test::random_images(2, 16, 16, 5);
    auto eps = torch::randn({2, 8, 32});
    auto run = [&] {
        auto post = model->encoder->encode(model->encoder->embed(img));
        return model->decoder->decode(reparameterize(post, eps)).pixels;
    };
    EXPECT_TRUE(torch::equal(run(), run()));
}

TEST(MacTok, ParameterDigestTracksValues) {
    torch::manual_seed(5);
    MacTok a(small());
    torch::manual_seed(5);
    MacTok b(small());
    EXPECT_EQ(parameter_digest(*a), parameter_digest(*b));
    {
        torch::NoGradGuard ng;
        b->decoder->recon_tokens[0][0] += 1.0f;
    }
    EXPECT_NE(parameter_digest(*a), parameter_digest(*b));
    EXPECT_EQ(parameter_digest(*a->encoder), parameter_digest(*b->encoder));
}

TEST(MacTok, OverfitsSmallSetWithoutMaskOrKl) {
    auto cfg = test::tiny_config();
    cfg.model.width = 64;
    cfg.model.encoder_depth = 2;
    cfg.model.decoder_depth = 2;
    cfg.model.heads = 4;
    cfg.model.latent_tokens = 16;
    cfg.model.latent_dim = 32;
    cfg.masking = MaskingMode::none;
    cfg.mask_max = 0.0;
    cfg.weights = {0.0, 0.0, 0.0, 0.0};
    cfg.steps = 8000;
    cfg.warmup_steps = 20;
    cfg.batch_size = 16;
    cfg.lr = 4e-3;
    cfg.log_every = 0;
    auto data = synthetic_shapes(64, 16, 77);
    Trainer trainer(cfg);
    trainer.fit(data);
    const double mse = evaluate_reconstruction(trainer.model(), data).mse;
    const double baseline = (data.images - data.images.mean(0, true)).pow(2).mean().item<double>();
    EXPECT_LT(mse, 0.1 * baseline) << "mse " << mse << " baseline " << baseline;
}
