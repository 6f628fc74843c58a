#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include <torch/torch.h>

#include "mactok/training.hpp"

namespace mactok::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("mactok-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline ImageBatch random_images(int64_t b, int64_t h, int64_t w, uint64_t seed) {
    auto gen = at::detail::createCPUGenerator(seed);
    return ImageBatch{torch::rand({b, h, w, 3}, gen, torch::kFloat32) * 2 - 1};
}

/// Smallest architecture the tests train: 16×16 images, P = 4, L = 4.
inline TrainConfig tiny_config() {
    TrainConfig c;
    c.model.image_size = 16;
    c.model.patch_size = 4;
    c.model.width = 32;
    c.model.encoder_depth = 1;
    c.model.decoder_depth = 1;
    c.model.heads = 2;
    c.model.mlp_ratio = 2;
    c.model.latent_tokens = 4;
    c.model.latent_dim = 8;
    c.model.feature_dim = 16;
    c.steps = 10;
    c.batch_size = 4;
    c.warmup_steps = 2;
    c.lr = 1e-3;
    c.weights.adv = 0.0;
    c.data_count = 16;
    return c;
}

}  // namespace mactok::test
