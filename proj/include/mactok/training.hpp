#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <ATen/core/Generator.h>
#include <torch/optim/adamw.h>

#include "mactok/config.hpp"
#include "mactok/data.hpp"
#include "mactok/features.hpp"
#include "mactok/masking.hpp"
#include "mactok/objectives.hpp"
#include "mactok/tokenizer.hpp"

namespace mactok {

/// Where the corruption is applied during training.
///  - image:  patch tokens are replaced by the mask token before encoding
///  - latent: a random subset of sampled latent tokens is zeroed after encoding
///  - none:   plain KL autoencoder
enum class MaskingMode { image, latent, none };

std::string_view to_string(MaskingMode m);
MaskingMode masking_mode_from_string(const std::string& s);

struct TrainConfig {
    TokenizerConfig model;
    int64_t steps = 1000;
    int64_t batch_size = 32;
    double lr = 1e-4;
    int64_t warmup_steps = 100;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 1e-4;
    double grad_clip = 1.0;
    double mask_max = 0.7;  // M; 0 disables masking
    double semantic_probability = 0.5;
    MaskingMode masking = MaskingMode::image;
    LossWeights weights;
    uint64_t seed = 0;

    std::string data = "synthetic:shapes";
    int64_t data_count = 64;
    uint64_t data_seed = 1234;
    std::string backbone = "stub";
    int64_t feature_patch_size = 0;  // 0: same as the tokenizer patch size
    int64_t log_every = 50;
    int64_t finetune_epochs = 10;
    double finetune_lr = 1e-4;
    std::string out_dir = "runs/default";

    bool masking_enabled() const { return masking != MaskingMode::none && mask_max > 0.0; }
    void validate() const;

    /// Applies key=value overrides; unknown keys raise ConfigError naming the key.
    void apply(const KeyValues& kv);
    KeyValues to_key_values() const;

    static TrainConfig from_key_values(const KeyValues& kv);
    static TrainConfig from_file(const std::filesystem::path& path);
    /// `key  description` lines for every accepted key.
    static std::string schema();
};

/// Linear warm-up from 0 to the peak, then cosine decay to 0 at the final step.
double lr_at(int64_t step, const TrainConfig& cfg);

/// Ordered loss reports plus checkpoint paths written along the way.
struct RunLog {
    std::vector<LossReport> reports;
    std::vector<std::string> checkpoints;

    /// Appends a report; steps must be strictly increasing.
    void append(LossReport report);
    void write_csv(const std::filesystem::path& path) const;
    bool operator==(const RunLog&) const = default;
};

/// Owns the model and optimizer for one run and executes the masked
/// training pipeline step by step.
class Trainer {
public:
    explicit Trainer(TrainConfig cfg, std::shared_ptr<FeatureProvider> provider = nullptr,
                     std::shared_ptr<AdversarialHook> adversarial = nullptr);

    /// choose strategy → ratio → plan → mask → encode → sample → decode →
    /// losses on the clean image → composite → one AdamW update.
    LossReport train_step(const ImageBatch& batch);

    /// Runs cfg.steps steps from batches drawn from `data`.
    RunLog fit(const Dataset& data, const std::function<void(const LossReport&)>& on_step = {});

    MacTok& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    int64_t step() const { return step_; }
    FeatureProvider& provider() { return *provider_; }
    void set_last_checkpoint(std::string path) { last_checkpoint_ = std::move(path); }
    /// Copies parameters from `source` and continues counting from `step`.
    /// Optimizer moments start fresh.
    void restore(MacTok& source, int64_t step);

private:
    std::vector<MaskPlan> make_plans(const FeatureBundle& clean, int64_t batch, std::string* strategy_tag,
                                     double* mean_ratio);
    torch::Tensor mask_latents(const torch::Tensor& zhat, double* mean_ratio);

    TrainConfig cfg_;
    MacTok model_{nullptr};
    std::shared_ptr<FeatureProvider> provider_;
    std::shared_ptr<FeatureProvider> targets_;
    std::shared_ptr<AdversarialHook> adversarial_;
    std::unique_ptr<torch::optim::AdamW> optimizer_;
    Rng mask_rng_;
    at::Generator noise_gen_;
    int64_t step_ = 0;
    std::string last_checkpoint_;
};

/// Builds the feature provider named by cfg.backbone.
std::shared_ptr<FeatureProvider> make_provider(const TrainConfig& cfg);

/// Mean reconstruction errors of posterior-mean reconstructions, in the
/// normalized [-1, 1] pixel space.
struct ReconstructionScore {
    double mse = 0.0;
    double mae = 0.0;
};
ReconstructionScore evaluate_reconstruction(MacTok& model, const Dataset& data, int64_t batch_size = 64);

/// Posterior statistics of unmasked inputs.
struct LatentStatistics {
    double kl = 0.0;                 // mean per-image KL (nats)
    std::vector<double> kl_per_dim;  // [Z]
    double active_dim_fraction = 0.0;
    torch::Tensor pooled_mu;         // [M, Z], μ averaged over the latent tokens
};
LatentStatistics latent_statistics(MacTok& model, const Dataset& data, int64_t batch_size = 64);

/// Decoder fine-tuning: encoder (including latent queries, mask token and
/// positional tables) frozen, no masking, decoder trained on recon + percep
/// (+ adversarial) from the posterior mean. Returns one report per update.
RunLog finetune_decoder(MacTok& model, const Dataset& data, int64_t epochs, const TrainConfig& cfg,
                        FeatureProvider& provider);

struct SweepCell {
    double mask_max = 0.7;
    double semantic_probability = 0.5;
    std::string label;
};

struct SweepResult {
    SweepCell cell;
    RunLog log;
    ReconstructionScore validation;
    double final_kl = 0.0;
    double final_active_dim_fraction = 0.0;
    std::optional<std::string> error;
};

/// One run per cell with the shared seed in `cfg`. A failing cell records its
/// error and the sweep moves on.
std::vector<SweepResult> ablation_sweep(const std::vector<SweepCell>& cells, const TrainConfig& cfg,
                                        const Dataset& train, const Dataset& validation);

std::string sweep_csv(const std::vector<SweepResult>& results);

}  // namespace mactok
