#pragma once

#include <cstdint>

#include <torch/nn/module.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/pimpl.h>

#include "mactok/features.hpp"

namespace mactok {

/// Repeats each latent token r times in contiguous blocks: output j holds
/// token j / r. [B, L, Z] -> [B, L·r, Z].
torch::Tensor expand(const torch::Tensor& zhat, int64_t repeats);

/// Repetition count r = N / L; throws ConfigError unless it is a positive integer.
int64_t expansion_factor(int64_t patch_count, int64_t latent_tokens);

/// Mean over the latent axis: [B, L, Z] -> [B, Z].
torch::Tensor pool_global(const torch::Tensor& zhat);

/// Two-layer projector Z -> 4Z -> Df with a GELU in between.
class ProjectorImpl : public torch::nn::Module {
public:
    ProjectorImpl(int64_t in_dim, int64_t out_dim);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Projector);

/// Local (per expanded token) and global (pooled) projection heads into the
/// feature backbone's space.
class AlignmentHeadsImpl : public torch::nn::Module {
public:
    AlignmentHeadsImpl(int64_t latent_dim, int64_t feature_dim);

    Projector local{nullptr};
    Projector global{nullptr};
};
TORCH_MODULE(AlignmentHeads);

struct AlignmentResult {
    torch::Tensor loss;          // scalar, in [-1, 1]
    int64_t zero_norm_pairs = 0; // pairs whose similarity was forced to 0
};

/// Cosine similarity along the last axis, defined as 0 when either vector has
/// zero norm. `zero_count` receives the number of such pairs.
torch::Tensor safe_cosine(const torch::Tensor& a, const torch::Tensor& b, int64_t* zero_count = nullptr);

/// −(Σ_i cos(o_loc,i, p_i) + cos(o_glob, c)) / (N + 1), averaged over the batch.
/// o_loc [B, N, Df], o_glob [B, Df], patches [B, N, Df], cls [B, Df].
AlignmentResult alignment_loss_from_projections(const torch::Tensor& o_loc, const torch::Tensor& o_glob,
                                                const torch::Tensor& patches, const torch::Tensor& cls);

/// Full representation-alignment loss: expand + pool the latents, project with
/// the heads and compare against the (clean-image) features. The feature
/// patch count must equal the tokenizer's patch count (resample beforehand).
AlignmentResult alignment_loss(const torch::Tensor& zhat, const FeatureBundle& features, AlignmentHeads& heads);

}  // namespace mactok
