#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/types.h>

#include "mactok/features.hpp"
#include "mactok/patching.hpp"

namespace mactok {

/// All host-side sampling (mask ratios, indices, strategy choice) draws from
/// this engine so that a seed fixes every plan bit for bit.
using Rng = std::mt19937_64;

enum class MaskStrategy { random, semantic };

std::string_view to_string(MaskStrategy s);

/// Patches to hide for one image.
struct MaskPlan {
    std::vector<int64_t> indices;  // sorted, unique, in [0, N)
    double ratio = 0.0;
    MaskStrategy strategy = MaskStrategy::random;
    uint64_t seed = 0;
};

/// ⌊m·N⌋ computed exactly for the double m (no rounding up across an integer).
int64_t masked_count(int64_t token_count, double ratio);

/// Draws u ~ U[-0.1, M] and clips to [0, M]; m = 0 has probability 0.1/(M+0.1).
double sample_ratio(double max_ratio, Rng& rng);

/// ⌊m·N⌋ indices uniformly without replacement.
MaskPlan plan_random(int64_t token_count, double ratio, Rng& rng);

/// The ⌊m·N⌋ highest scores; equal scores go to the lower index first.
MaskPlan plan_semantic(std::span<const double> scores, double ratio);

/// Cosine similarity between the global vector and every patch vector of a
/// single-image bundle (batch index `image`).
std::vector<double> relevance_scores(const FeatureBundle& features, int64_t image = 0);

/// Replaces masked token contents with the shared mask token. `tokens` is
/// [N, D] for a single plan or [B, N, D] with one plan per image.
torch::Tensor apply_mask(const torch::Tensor& tokens, std::span<const MaskPlan> plans, const torch::Tensor& mask_token);

PatchSequence apply_mask(const PatchSequence& seq, std::span<const MaskPlan> plans, const torch::Tensor& mask_token);

/// Mixing of the two strategies. The default draws each with probability 1/2;
/// semantic_probability of 0 or 1 forces one of them.
struct StrategyMix {
    double semantic_probability = 0.5;

    static StrategyMix random_only() { return {0.0}; }
    static StrategyMix semantic_only() { return {1.0}; }
};

MaskStrategy choose_strategy(Rng& rng, StrategyMix mix = {});

/// Learnable replacement vector shared by every masked position.
struct MaskToken {
    torch::Tensor vector;  // [D]
};

}  // namespace mactok
