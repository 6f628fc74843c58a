#include "mactok/alignment.hpp"

#include <torch/torch.h>

#include "mactok/error.hpp"

namespace mactok {

torch::Tensor expand(const torch::Tensor& zhat, int64_t repeats) {
    if (repeats < 1) throw ConfigError("expansion factor must be a positive integer");
    return zhat.repeat_interleave(repeats, /*dim=*/1);
}

int64_t expansion_factor(int64_t patch_count, int64_t latent_tokens) {
    if (latent_tokens <= 0 || patch_count <= 0 || patch_count % latent_tokens != 0) {
        throw ConfigError("patch count " + std::to_string(patch_count) + " is not a multiple of latent token count " +
                          std::to_string(latent_tokens));
    }
    return patch_count / latent_tokens;
}

torch::Tensor pool_global(const torch::Tensor& zhat) {
    if (zhat.dim() != 3 || zhat.size(1) < 1) throw ShapeError("pool_global expects [B, L, Z] with L >= 1");
    return zhat.mean(1);
}

ProjectorImpl::ProjectorImpl(int64_t in_dim, int64_t out_dim)
    : fc1(register_module("fc1", torch::nn::Linear(in_dim, 4 * in_dim))),
      fc2(register_module("fc2", torch::nn::Linear(4 * in_dim, out_dim))) {}

torch::Tensor ProjectorImpl::forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(x))); }

AlignmentHeadsImpl::AlignmentHeadsImpl(int64_t latent_dim, int64_t feature_dim)
    : local(register_module("local", Projector(latent_dim, feature_dim))),
      global(register_module("global", Projector(latent_dim, feature_dim))) {}

torch::Tensor safe_cosine(const torch::Tensor& a, const torch::Tensor& b, int64_t* zero_count) {
    auto an = a.norm(2, {-1});
    auto bn = b.norm(2, {-1});
    auto valid = (an > 0) & (bn > 0);
    if (zero_count) *zero_count = (~valid).sum().item<int64_t>();
    // Division by a clamped denominator keeps gradients finite on the masked-out lanes.
    auto denom = (an * bn).clamp_min(std::numeric_limits<float>::min());
    auto cos = (a * b).sum(-1) / denom;
    return torch::where(valid, cos, torch::zeros_like(cos));
}

AlignmentResult alignment_loss_from_projections(const torch::Tensor& o_loc, const torch::Tensor& o_glob,
                                                const torch::Tensor& patches, const torch::Tensor& cls) {
    if (o_loc.sizes() != patches.sizes()) throw ShapeError("local projections and patch features differ in shape");
    if (o_glob.sizes() != cls.sizes()) throw ShapeError("global projection and cls feature differ in shape");
    int64_t zl = 0, zg = 0;
    auto local = safe_cosine(o_loc, patches.to(o_loc.scalar_type()), &zl);    // [B, N]
    auto global = safe_cosine(o_glob, cls.to(o_glob.scalar_type()), &zg);     // [B]
    const auto n = static_cast<double>(o_loc.size(1));
    auto per_image = -(local.sum(1) + global) / (n + 1.0);
    return {per_image.mean(), zl + zg};
}

AlignmentResult alignment_loss(const torch::Tensor& zhat, const FeatureBundle& features, AlignmentHeads& heads) {
    const auto n = features.patches.size(1);
    const auto r = expansion_factor(n, zhat.size(1));
    auto o_loc = heads->local(expand(zhat, r));
    auto o_glob = heads->global(pool_global(zhat));
    return alignment_loss_from_projections(o_loc, o_glob, features.patches, features.cls);
}

}  // namespace mactok
