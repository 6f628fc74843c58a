#include <gtest/gtest.h>

#include <cstdlib>

#include <torch/torch.h>

#include "../support.hpp"
#include "mactok/error.hpp"
#include "mactok/features.hpp"

using namespace mactok;

TEST(Stub, ConstantImageGivesEqualPatchesAndMeanCls) {
    StubBackbone stub(4, 64, 0);
    auto f = stub.extract(ImageBatch{torch::full({1, 16, 16, 3}, 0.3f)});
    EXPECT_EQ(f.patches.sizes(), (std::vector<int64_t>{1, 16, 64}));
    EXPECT_EQ(f.grid, (Grid{4, 4}));
    for (int64_t i = 1; i < 16; ++i) EXPECT_TRUE(torch::equal(f.patches[0][i], f.patches[0][0]));
    EXPECT_TRUE(torch::allclose(f.cls[0], f.patches[0][0], 1e-6, 1e-6));
}

TEST(Stub, ClsIsPatchMean) {
    StubBackbone stub(4, 8, 1);
    auto f = stub.extract(test::random_images(2, 8, 8, 3));
    EXPECT_TRUE(torch::allclose(f.cls, f.patches.sum(1) / 4.0, 1e-6, 1e-6));
}

TEST(Stub, DeterministicForFixedSeed) {
    auto img = test::random_images(2, 16, 16, 4);
    StubBackbone a(4, 32, 7), b(4, 32, 7), c(4, 32, 8);
    EXPECT_TRUE(torch::equal(a.extract(img).patches, a.extract(img).patches));
    EXPECT_TRUE(torch::equal(a.extract(img).patches, b.extract(img).patches));
    EXPECT_FALSE(torch::equal(a.extract(img).patches, c.extract(img).patches));
}

TEST(External, UnavailableBackboneSignals) {
    ExternalBackbone dino("dinov2-b14");
    EXPECT_THROW(dino.extract(test::random_images(1, 16, 16, 0)), BackboneUnavailableError);
}

TEST(Cache, RoundTripIsBitExact) {
    test::TempDir dir("cache");
    FeatureCache cache(dir.path());
    StubBackbone stub(4, 16, 0);
    auto img = test::random_images(1, 16, 16, 5);
    auto f = stub.extract(img);
    const auto key = FeatureCache::key(img.pixels[0], stub.id());
    EXPECT_FALSE(cache.load(key).has_value());
    cache.store(key, f);
    auto back = cache.load(key);
    ASSERT_TRUE(back.has_value());
    EXPECT_TRUE(torch::equal(back->cls, f.cls));
    EXPECT_TRUE(torch::equal(back->patches, f.patches));
    EXPECT_EQ(back->grid, f.grid);
}

TEST(Cache, KeyDependsOnContentAndBackbone) {
    auto a = test::random_images(1, 8, 8, 1).pixels[0];
    auto b = a.clone();
    b[0][0][0] += 0.5f;
    EXPECT_EQ(FeatureCache::key(a, "x"), FeatureCache::key(a.clone(), "x"));
    EXPECT_NE(FeatureCache::key(a, "x"), FeatureCache::key(b, "x"));
    EXPECT_NE(FeatureCache::key(a, "x"), FeatureCache::key(a, "y"));
}

TEST(Cache, CachedProviderHitsMatchMisses) {
    test::TempDir dir("cached");
    auto stub = std::make_shared<StubBackbone>(4, 16, 0);
    CachedProvider cached(stub, FeatureCache(dir.path()));
    auto img = test::random_images(3, 16, 16, 6);
    auto first = cached.extract(img);
    auto second = cached.extract(img);
    EXPECT_EQ(cached.misses(), 3);
    EXPECT_EQ(cached.hits(), 3);
    EXPECT_TRUE(torch::equal(first.patches, second.patches));
    EXPECT_TRUE(torch::equal(first.cls, second.cls));
    EXPECT_TRUE(torch::equal(first.patches, stub->extract(img).patches));
}

TEST(Cache, EnvironmentOverridesLocation) {
    test::TempDir dir("env");
    ::setenv("FEATURE_CACHE_DIR", dir.path().c_str(), 1);
    EXPECT_EQ(FeatureCache::from_env("/nonexistent").dir(), dir.path());
    ::unsetenv("FEATURE_CACHE_DIR");
    EXPECT_EQ(FeatureCache::from_env("/fallback").dir(), std::filesystem::path("/fallback"));
}

TEST(Resample, IdentityBlocksAndConstant) {
    std::vector<double> s{1, 2, 3, 4};
    EXPECT_EQ(resample_scores(s, {2, 2}, {2, 2}), s);
    auto up = resample_scores(s, {2, 2}, {4, 4});
    std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    EXPECT_EQ(up, expect);
    std::vector<double> c(16, 0.25);
    EXPECT_EQ(resample_scores(c, {4, 4}, {2, 2}), std::vector<double>(4, 0.25));
}

TEST(Resample, UpsamplingPreservesExtremes) {
    Rng rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 50; ++t) {
        const Grid from{1 + t % 5, 1 + t % 3};
        const Grid to{from.rows * (1 + t % 4), from.cols * (2 + t % 2)};
        std::vector<double> s(static_cast<size_t>(from.count()));
        for (auto& v : s) v = u(rng);
        auto r = resample_scores(s, from, to);
        EXPECT_EQ(*std::min_element(r.begin(), r.end()), *std::min_element(s.begin(), s.end()));
        EXPECT_EQ(*std::max_element(r.begin(), r.end()), *std::max_element(s.begin(), s.end()));
    }
}

TEST(Resample, PatchGridFollowsScores) {
    auto p = torch::arange(4, torch::kFloat32).reshape({1, 4, 1});
    auto r = resample_patch_grid(p, {2, 2}, {4, 4}).flatten();
    std::vector<double> s{0, 1, 2, 3};
    auto expect = resample_scores(s, {2, 2}, {4, 4});
    for (int i = 0; i < 16; ++i) EXPECT_EQ(r[i].item<float>(), expect[static_cast<size_t>(i)]);
}
