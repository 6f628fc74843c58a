#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/types.h>

#include "mactok/training.hpp"

namespace mactok {

inline constexpr int kCheckpointFormatVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Writes manifest.json plus one little-endian float32 file per tensor.
/// `config` is stored verbatim in the manifest.
void save_tensors(const std::filesystem::path& dir, const NamedTensors& tensors, const KeyValues& config = {},
                  int64_t step = 0);

struct TensorArchive {
    NamedTensors tensors;
    KeyValues config;
    int64_t step = 0;
};

TensorArchive load_tensors(const std::filesystem::path& dir);

void save_checkpoint(const std::filesystem::path& dir, MacTok& model, const TrainConfig& cfg, int64_t step);

struct LoadedCheckpoint {
    TrainConfig config;
    MacTok model{nullptr};
    int64_t step = 0;
};

/// Rebuilds the model from the stored config and copies every parameter in.
/// Missing, extra or mis-shaped tensors raise IoError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace mactok
