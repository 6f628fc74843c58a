#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <torch/nn/module.h>
#include <torch/optim/optimizer.h>
#include <torch/types.h>

#include "mactok/features.hpp"
#include "mactok/image.hpp"
#include "mactok/tokenizer.hpp"

namespace mactok {

/// Weights of the composite objective
///   L = recon + λ1·percep + λ2·adv + λ3·KL + λ4·RA.
struct LossWeights {
    double percep = 1.0;  // λ1
    double adv = 0.2;     // λ2
    double kl = 1e-6;     // λ3
    double ra = 0.1;      // λ4
};

/// Per-channel KL above this many nats counts a latent channel as active.
inline constexpr double kActiveDimThreshold = 0.01;

struct LossParts {
    double recon = 0.0;
    double percep = 0.0;
    double adv = 0.0;
    double kl = 0.0;
    double ra = 0.0;
};

struct LossReport {
    int64_t step = 0;
    double recon = 0.0;
    double percep = 0.0;
    double adv = 0.0;
    double kl = 0.0;
    double ra = 0.0;
    double total = 0.0;
    std::vector<double> kl_per_dim;  // [Z], mean over batch and tokens
    double active_dim_fraction = 0.0;
    double mask_ratio_used = 0.0;
    std::string strategy = "none";
    int64_t zero_norm_warnings = 0;

    double kl_per_dim_mean() const;
    bool operator==(const LossReport&) const = default;
};

/// Mean absolute error over every pixel and channel.
torch::Tensor recon_loss(const ImageBatch& xhat, const ImageBatch& x);

struct KlTerms {
    torch::Tensor total;    // scalar: sum over tokens and channels, mean over batch
    torch::Tensor per_dim;  // [Z]: mean over batch and tokens
};

/// Closed form KL(N(μ, σ²) ‖ N(0, 1)) = −½(1 + log σ² − μ² − σ²) per element.
KlTerms kl_loss(const LatentPosterior& posterior);

/// Gradient of kl_loss(...).total with respect to μ and logvar, written out in
/// closed form: μ / B and ½(exp(logvar) − 1) / B.
LatentPosterior kl_loss_gradient(const LatentPosterior& posterior);

/// Mean squared difference of the concatenated (cls, patches) features.
torch::Tensor percep_loss(const ImageBatch& xhat, const ImageBatch& x, FeatureProvider& provider);

/// Extension point for adversarial training. The default returns 0 and adds
/// nothing to the gradient.
class AdversarialHook {
public:
    virtual ~AdversarialHook() = default;
    /// Generator-side loss on reconstructions.
    virtual torch::Tensor generator_loss(const ImageBatch& xhat);
    /// One discriminator update on real vs. reconstructed images.
    virtual void discriminator_step(const ImageBatch& real, const ImageBatch& fake);
    virtual bool active() const { return false; }
};

/// Hinge GAN hook around an arbitrary discriminator mapping [B, H, W, 3] to logits.
class HingeAdversarialHook final : public AdversarialHook {
public:
    HingeAdversarialHook(std::shared_ptr<torch::nn::Module> discriminator,
                         std::function<torch::Tensor(const torch::Tensor&)> forward, double lr = 1e-4);

    torch::Tensor generator_loss(const ImageBatch& xhat) override;
    void discriminator_step(const ImageBatch& real, const ImageBatch& fake) override;
    bool active() const override { return true; }

private:
    std::shared_ptr<torch::nn::Module> disc_;
    std::function<torch::Tensor(const torch::Tensor&)> forward_;
    std::unique_ptr<torch::optim::Optimizer> opt_;
};

/// Builds the report for already-computed parts. Throws DivergenceError naming
/// the first non-finite part.
LossReport composite(const LossParts& parts, const LossWeights& weights, std::vector<double> kl_per_dim = {});

/// Same weighted sum on tensors, used for backpropagation.
torch::Tensor composite_tensor(const torch::Tensor& recon, const torch::Tensor& percep, const torch::Tensor& adv,
                               const torch::Tensor& kl, const torch::Tensor& ra, const LossWeights& weights);

double active_dim_fraction(const std::vector<double>& kl_per_dim, double threshold = kActiveDimThreshold);

/// step,total,recon,percep,adv,kl,ra,kl_per_dim_mean,active_dim_fraction,mask_ratio,strategy
std::string loss_csv_header();
std::string loss_csv_row(const LossReport& report);

}  // namespace mactok
