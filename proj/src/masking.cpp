#include "mactok/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <torch/torch.h>

#include "mactok/error.hpp"

namespace mactok {

std::string_view to_string(MaskStrategy s) { return s == MaskStrategy::random ? "random" : "semantic"; }

int64_t masked_count(int64_t token_count, double ratio) {
    if (ratio < 0.0 || ratio > 1.0 || std::isnan(ratio)) throw InvalidInputError("mask ratio must lie in [0, 1]");
    if (token_count < 0) throw InvalidInputError("token count must be nonnegative");
    const auto n = static_cast<double>(token_count);
    auto k = std::floor(ratio * n);
    // The rounded product can land on an integer the exact product does not reach.
    if (std::fma(ratio, n, -k) < 0.0) k -= 1.0;
    return static_cast<int64_t>(k);
}

double sample_ratio(double max_ratio, Rng& rng) {
    if (!(max_ratio > 0.0) || max_ratio > 1.0) throw ConfigError("maximum mask ratio must lie in (0, 1]");
    std::uniform_real_distribution<double> u(-0.1, max_ratio);
    return std::clamp(u(rng), 0.0, max_ratio);
}

MaskPlan plan_random(int64_t token_count, double ratio, Rng& rng) {
    MaskPlan plan;
    plan.ratio = ratio;
    plan.strategy = MaskStrategy::random;
    const auto k = masked_count(token_count, ratio);
    plan.seed = rng();
    // Partial Fisher-Yates on a sub-engine so the draw count per plan is fixed.
    Rng local(plan.seed);
    std::vector<int64_t> pool(static_cast<size_t>(token_count));
    std::iota(pool.begin(), pool.end(), 0);
    for (int64_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<int64_t> pick(i, token_count - 1);
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick(local))]);
    }
    plan.indices.assign(pool.begin(), pool.begin() + k);
    std::sort(plan.indices.begin(), plan.indices.end());
    return plan;
}

MaskPlan plan_semantic(std::span<const double> scores, double ratio) {
    if (std::any_of(scores.begin(), scores.end(), [](double s) { return std::isnan(s); })) {
        throw InvalidInputError("relevance scores contain NaN");
    }
    const auto n = static_cast<int64_t>(scores.size());
    const auto k = masked_count(n, ratio);
    std::vector<int64_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int64_t a, int64_t b) {
        const auto sa = scores[static_cast<size_t>(a)];
        const auto sb = scores[static_cast<size_t>(b)];
        return sa != sb ? sa > sb : a < b;
    });
    MaskPlan plan;
    plan.indices.assign(order.begin(), order.begin() + k);
    std::sort(plan.indices.begin(), plan.indices.end());
    plan.ratio = ratio;
    plan.strategy = MaskStrategy::semantic;
    return plan;
}

std::vector<double> relevance_scores(const FeatureBundle& features, int64_t image) {
    auto c = features.cls[image].detach().to(torch::kFloat64);
    auto p = features.patches[image].detach().to(torch::kFloat64);
    const auto cn = c.norm().item<double>();
    auto pn = p.norm(2, {1});
    if (!(cn > 0.0) || !(pn.min().item<double>() > 0.0)) {
        throw InvalidInputError("relevance scores need nonzero global and patch vectors");
    }
    auto s = (torch::matmul(p, c) / (pn * cn)).clamp(-1.0, 1.0).contiguous();
    return {s.data_ptr<double>(), s.data_ptr<double>() + s.numel()};
}

torch::Tensor apply_mask(const torch::Tensor& tokens, std::span<const MaskPlan> plans, const torch::Tensor& mask_token) {
    const bool batched = tokens.dim() == 3;
    if (!batched && tokens.dim() != 2) throw ShapeError("tokens must be [N, D] or [B, N, D]");
    const auto b = batched ? tokens.size(0) : 1;
    if (static_cast<int64_t>(plans.size()) != b) throw ShapeError("need exactly one mask plan per image");
    const auto n = tokens.size(-2);
    if (mask_token.dim() != 1 || mask_token.size(0) != tokens.size(-1)) throw ShapeError("mask token width mismatch");

    auto keep = torch::ones({b, n, 1}, torch::kFloat32);
    auto keep_acc = keep.accessor<float, 3>();
    bool any = false;
    for (int64_t i = 0; i < b; ++i) {
        for (auto idx : plans[static_cast<size_t>(i)].indices) {
            if (idx < 0 || idx >= n) throw ShapeError("mask index " + std::to_string(idx) + " out of range");
            keep_acc[i][idx][0] = 0.0f;
            any = true;
        }
    }
    if (!any) return tokens;
    auto keep_t = keep.to(tokens.scalar_type());
    if (!batched) keep_t = keep_t.squeeze(0);
    return torch::where(keep_t > 0.5, tokens, mask_token.to(tokens.scalar_type()));
}

PatchSequence apply_mask(const PatchSequence& seq, std::span<const MaskPlan> plans, const torch::Tensor& mask_token) {
    auto out = seq;
    out.tokens = apply_mask(seq.tokens, plans, mask_token);
    return out;
}

MaskStrategy choose_strategy(Rng& rng, StrategyMix mix) {
    if (mix.semantic_probability <= 0.0) return MaskStrategy::random;
    if (mix.semantic_probability >= 1.0) return MaskStrategy::semantic;
    std::bernoulli_distribution semantic(mix.semantic_probability);
    return semantic(rng) ? MaskStrategy::semantic : MaskStrategy::random;
}

}  // namespace mactok
