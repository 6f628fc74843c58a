#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/types.h>

#include "mactok/image.hpp"
#include "mactok/patching.hpp"

namespace mactok {

/// Pretrained-backbone output for a batch: one global vector per image and
/// a grid of patch vectors.
struct FeatureBundle {
    torch::Tensor cls;      // [B, Df]
    torch::Tensor patches;  // [B, Nf, Df]
    Grid grid;

    int64_t dim() const { return cls.size(-1); }
    /// The single-image bundle at batch index i (batch dimension kept).
    FeatureBundle slice(int64_t i) const;
};

/// Interface to a frozen vision backbone. Implementations must be
/// differentiable with respect to the input pixels when used for the
/// perceptual loss.
class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;
    virtual FeatureBundle extract(const ImageBatch& images) = 0;
    /// Stable identifier; part of the cache key.
    virtual std::string id() const = 0;
};

/// Deterministic stand-in backbone: a fixed random linear map of each patch's
/// raw pixels to `dim` features; cls is the mean patch vector.
class StubBackbone final : public FeatureProvider {
public:
    explicit StubBackbone(int64_t patch_size, int64_t dim = 64, uint64_t seed = 0);

    FeatureBundle extract(const ImageBatch& images) override;
    std::string id() const override;

    const torch::Tensor& weight() const { return weight_; }
    int64_t patch_size() const { return patch_size_; }

private:
    int64_t patch_size_;
    int64_t dim_;
    uint64_t seed_;
    torch::Tensor weight_;  // [3P², Df]
};

/// Placeholder for a real pretrained backbone (e.g. DINOv2). Weights are not
/// shipped, so extract always reports the backbone as unavailable.
class ExternalBackbone final : public FeatureProvider {
public:
    explicit ExternalBackbone(std::string name) : name_(std::move(name)) {}
    FeatureBundle extract(const ImageBatch& images) override;
    std::string id() const override { return name_; }

private:
    std::string name_;
};

/// On-disk store of single-image feature bundles keyed by content hash.
///
/// Each entry is one file: a short text manifest terminated by an "end" line,
/// then the little-endian float32 bytes of cls followed by patches. Writes go
/// to a temporary file that is renamed into place, so concurrent readers never
/// observe a partial entry.
class FeatureCache {
public:
    explicit FeatureCache(std::filesystem::path dir);

    /// FEATURE_CACHE_DIR if set, otherwise `fallback`.
    static FeatureCache from_env(const std::filesystem::path& fallback);

    /// SHA-256 over the float32 pixels of one image [H, W, 3] and the backbone id.
    static std::string key(const torch::Tensor& image_hw3, const std::string& backbone_id);

    std::optional<FeatureBundle> load(const std::string& key) const;
    void store(const std::string& key, const FeatureBundle& single) const;

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path path_for(const std::string& key) const;
    std::filesystem::path dir_;
};

/// Serves per-image bundles from a cache, computing misses with `inner`.
/// Returned tensors are detached; use the inner provider where gradients
/// through the backbone are needed.
class CachedProvider final : public FeatureProvider {
public:
    CachedProvider(std::shared_ptr<FeatureProvider> inner, FeatureCache cache);

    FeatureBundle extract(const ImageBatch& images) override;
    std::string id() const override { return inner_->id(); }

    int64_t hits() const { return hits_; }
    int64_t misses() const { return misses_; }

private:
    std::shared_ptr<FeatureProvider> inner_;
    FeatureCache cache_;
    int64_t hits_ = 0;
    int64_t misses_ = 0;
};

/// Nearest-neighbour resampling of a row-major score map.
std::vector<double> resample_scores(std::span<const double> scores, Grid from, Grid to);

/// Nearest-neighbour resampling of per-patch vectors [B, Nf, C] onto another grid.
torch::Tensor resample_patch_grid(const torch::Tensor& patches, Grid from, Grid to);

}  // namespace mactok
