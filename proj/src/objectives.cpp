#include "mactok/objectives.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <torch/torch.h>

#include "mactok/error.hpp"

namespace mactok {

double LossReport::kl_per_dim_mean() const {
    if (kl_per_dim.empty()) return 0.0;
    return std::accumulate(kl_per_dim.begin(), kl_per_dim.end(), 0.0) / static_cast<double>(kl_per_dim.size());
}

torch::Tensor recon_loss(const ImageBatch& xhat, const ImageBatch& x) {
    if (xhat.pixels.sizes() != x.pixels.sizes()) throw ShapeError("reconstruction and target differ in shape");
    return (xhat.pixels - x.pixels.to(xhat.pixels.scalar_type())).abs().mean();
}

KlTerms kl_loss(const LatentPosterior& posterior) {
    const auto& mu = posterior.mu;
    const auto& logvar = posterior.logvar;
    auto elem = -0.5 * (1.0 + logvar - mu.pow(2) - logvar.exp());  // [B, L, Z]
    auto total = elem.sum({1, 2}).mean();
    auto per_dim = elem.mean({0, 1});
    return {total, per_dim};
}

LatentPosterior kl_loss_gradient(const LatentPosterior& posterior) {
    const auto b = static_cast<double>(posterior.mu.size(0));
    return {posterior.mu / b, 0.5 * (posterior.logvar.exp() - 1.0) / b};
}

torch::Tensor percep_loss(const ImageBatch& xhat, const ImageBatch& x, FeatureProvider& provider) {
    auto a = provider.extract(xhat);
    auto b = provider.extract(x);
    auto fa = torch::cat({a.cls.unsqueeze(1), a.patches}, 1);
    auto fb = torch::cat({b.cls.unsqueeze(1), b.patches}, 1).to(fa.scalar_type());
    return (fa - fb).pow(2).mean();
}

torch::Tensor AdversarialHook::generator_loss(const ImageBatch& xhat) {
    return torch::zeros({}, xhat.pixels.options().requires_grad(false));
}

void AdversarialHook::discriminator_step(const ImageBatch&, const ImageBatch&) {}

HingeAdversarialHook::HingeAdversarialHook(std::shared_ptr<torch::nn::Module> discriminator,
                                           std::function<torch::Tensor(const torch::Tensor&)> forward, double lr)
    : disc_(std::move(discriminator)), forward_(std::move(forward)) {
    opt_ = std::make_unique<torch::optim::Adam>(disc_->parameters(),
                                                torch::optim::AdamOptions(lr).betas({0.5, 0.9}));
}

torch::Tensor HingeAdversarialHook::generator_loss(const ImageBatch& xhat) { return -forward_(xhat.pixels).mean(); }

void HingeAdversarialHook::discriminator_step(const ImageBatch& real, const ImageBatch& fake) {
    opt_->zero_grad();
    auto loss = torch::relu(1.0 - forward_(real.pixels)).mean() + torch::relu(1.0 + forward_(fake.pixels.detach())).mean();
    loss.backward();
    opt_->step();
}

LossReport composite(const LossParts& parts, const LossWeights& weights, std::vector<double> kl_per_dim) {
    const std::pair<const char*, double> named[] = {
        {"recon", parts.recon}, {"percep", parts.percep}, {"adv", parts.adv}, {"kl", parts.kl}, {"ra", parts.ra}};
    for (const auto& [name, value] : named) {
        if (!std::isfinite(value)) throw DivergenceError(std::string(name) + " loss", "");
    }
    LossReport r;
    r.recon = parts.recon;
    r.percep = parts.percep;
    r.adv = parts.adv;
    r.kl = parts.kl;
    r.ra = parts.ra;
    r.total = parts.recon + weights.percep * parts.percep + weights.adv * parts.adv + weights.kl * parts.kl +
              weights.ra * parts.ra;
    r.active_dim_fraction = active_dim_fraction(kl_per_dim);
    r.kl_per_dim = std::move(kl_per_dim);
    return r;
}

torch::Tensor composite_tensor(const torch::Tensor& recon, const torch::Tensor& percep, const torch::Tensor& adv,
                               const torch::Tensor& kl, const torch::Tensor& ra, const LossWeights& weights) {
    return recon + weights.percep * percep + weights.adv * adv + weights.kl * kl + weights.ra * ra;
}

double active_dim_fraction(const std::vector<double>& kl_per_dim, double threshold) {
    if (kl_per_dim.empty()) return 0.0;
    const auto active = std::count_if(kl_per_dim.begin(), kl_per_dim.end(), [&](double v) { return v > threshold; });
    return static_cast<double>(active) / static_cast<double>(kl_per_dim.size());
}

std::string loss_csv_header() {
    return "step,total,recon,percep,adv,kl,ra,kl_per_dim_mean,active_dim_fraction,mask_ratio,strategy";
}

std::string loss_csv_row(const LossReport& r) {
    return fmt::format("{},{},{},{},{},{},{},{},{},{},{}", r.step, r.total, r.recon, r.percep, r.adv, r.kl, r.ra,
                       r.kl_per_dim_mean(), r.active_dim_fraction, r.mask_ratio_used, r.strategy);
}

}  // namespace mactok
