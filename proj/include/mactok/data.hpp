#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <torch/types.h>

#include "mactok/image.hpp"
#include "mactok/masking.hpp"

namespace mactok {

/// In-memory image set: normalized pixels [M, H, W, 3] and optional labels.
struct Dataset {
    torch::Tensor images;
    std::vector<int64_t> labels;

    int64_t size() const { return images.defined() ? images.size(0) : 0; }
    bool labeled() const { return !labels.empty(); }
    ImageBatch batch(std::span<const int64_t> indices) const;
    Dataset slice(int64_t begin, int64_t end) const;
};

inline constexpr int64_t kShapeClasses = 10;

/// Procedural 10-class corpus (disc, square, triangle, cross, horizontal
/// stripes, vertical stripes, ring, checkerboard, diagonal stripes, two dots)
/// with random colours, placement, scale and mild pixel noise. Labels cycle
/// through the classes so any prefix is close to balanced.
std::vector<RgbImage> render_shapes(int64_t count, int64_t image_size, uint64_t seed,
                                    std::vector<int64_t>* labels = nullptr);

Dataset synthetic_shapes(int64_t count, int64_t image_size, uint64_t seed);

/// Flat directory of images, or one subdirectory per class (labels follow the
/// sorted subdirectory names).
Dataset load_image_dir(const std::filesystem::path& dir);

/// Writes a dataset as PPM files, one subdirectory per label when labeled.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);

/// "synthetic:shapes" (generated from `seed`) or a directory path.
Dataset load_dataset(const std::string& source, int64_t count, int64_t image_size, uint64_t seed);

/// Endless shuffled batches: each epoch is a fresh permutation.
class BatchSampler {
public:
    BatchSampler(int64_t dataset_size, int64_t batch_size, uint64_t seed);
    std::vector<int64_t> next();

private:
    int64_t size_;
    int64_t batch_;
    Rng rng_;
    std::vector<int64_t> order_;
    int64_t cursor_ = 0;
};

}  // namespace mactok
