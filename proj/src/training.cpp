#include "mactok/training.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>

#include <ATen/CPUGeneratorImpl.h>
#include <fmt/format.h>
#include <torch/torch.h>

#include "mactok/error.hpp"

namespace mactok {

namespace fs = std::filesystem;

std::string_view to_string(MaskingMode m) {
    switch (m) {
        case MaskingMode::image: return "image";
        case MaskingMode::latent: return "latent";
        default: return "none";
    }
}

MaskingMode masking_mode_from_string(const std::string& s) {
    if (s == "image") return MaskingMode::image;
    if (s == "latent") return MaskingMode::latent;
    if (s == "none") return MaskingMode::none;
    throw ConfigError("config key 'masking': expected image, latent or none, got '" + s + "'");
}

namespace {

struct Field {
    const char* key;
    const char* help;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

#define MACTOK_INT_FIELD(name, member, help)                                                                 \
    Field {                                                                                                  \
        name, help, [](TrainConfig& c, const std::string& v) { c.member = parse_int(name, v); },            \
            [](const TrainConfig& c) { return std::to_string(c.member); }                                    \
    }
#define MACTOK_DOUBLE_FIELD(name, member, help)                                                              \
    Field {                                                                                                  \
        name, help, [](TrainConfig& c, const std::string& v) { c.member = parse_double(name, v); },         \
            [](const TrainConfig& c) { return fmt::format("{}", c.member); }                                 \
    }
#define MACTOK_STRING_FIELD(name, member, help)                                                              \
    Field {                                                                                                  \
        name, help, [](TrainConfig& c, const std::string& v) { c.member = v; },                              \
            [](const TrainConfig& c) { return c.member; }                                                    \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        MACTOK_INT_FIELD("image_size", model.image_size, "input resolution (square)"),
        MACTOK_INT_FIELD("patch_size", model.patch_size, "patch size P"),
        MACTOK_INT_FIELD("width", model.width, "transformer width D (encoder and decoder)"),
        MACTOK_INT_FIELD("encoder_depth", model.encoder_depth, "encoder blocks"),
        MACTOK_INT_FIELD("decoder_depth", model.decoder_depth, "decoder blocks"),
        MACTOK_INT_FIELD("heads", model.heads, "attention heads"),
        MACTOK_INT_FIELD("mlp_ratio", model.mlp_ratio, "MLP hidden width multiplier"),
        MACTOK_INT_FIELD("latent_tokens", model.latent_tokens, "latent token count L"),
        MACTOK_INT_FIELD("latent_dim", model.latent_dim, "latent channels Z"),
        MACTOK_INT_FIELD("feature_dim", model.feature_dim, "feature backbone width"),
        MACTOK_INT_FIELD("steps", steps, "training steps"),
        MACTOK_INT_FIELD("batch_size", batch_size, "images per step"),
        MACTOK_DOUBLE_FIELD("lr", lr, "peak learning rate"),
        MACTOK_INT_FIELD("warmup_steps", warmup_steps, "linear warm-up steps"),
        MACTOK_DOUBLE_FIELD("beta1", beta1, "AdamW beta1"),
        MACTOK_DOUBLE_FIELD("beta2", beta2, "AdamW beta2"),
        MACTOK_DOUBLE_FIELD("weight_decay", weight_decay, "AdamW weight decay"),
        MACTOK_DOUBLE_FIELD("grad_clip", grad_clip, "global gradient-norm clip (0 disables)"),
        MACTOK_DOUBLE_FIELD("mask_max", mask_max, "maximum mask ratio M in [0, 1]; 0 disables masking"),
        MACTOK_DOUBLE_FIELD("semantic_probability", semantic_probability,
                            "probability of semantic masking per image (0 random only, 1 semantic only)"),
        Field{"masking", "image | latent | none",
              [](TrainConfig& c, const std::string& v) { c.masking = masking_mode_from_string(v); },
              [](const TrainConfig& c) { return std::string(to_string(c.masking)); }},
        MACTOK_DOUBLE_FIELD("lambda_percep", weights.percep, "perceptual loss weight"),
        MACTOK_DOUBLE_FIELD("lambda_adv", weights.adv, "adversarial loss weight"),
        MACTOK_DOUBLE_FIELD("lambda_kl", weights.kl, "KL weight"),
        MACTOK_DOUBLE_FIELD("lambda_ra", weights.ra, "representation-alignment weight"),
        Field{"seed", "run seed (MACTOK_SEED overrides)",
              [](TrainConfig& c, const std::string& v) { c.seed = static_cast<uint64_t>(parse_int("seed", v)); },
              [](const TrainConfig& c) { return std::to_string(c.seed); }},
        MACTOK_STRING_FIELD("data", data, "synthetic:shapes or an image directory"),
        MACTOK_INT_FIELD("data_count", data_count, "images to generate / load (0 = all)"),
        Field{"data_seed", "seed of the synthetic corpus",
              [](TrainConfig& c, const std::string& v) {
                  c.data_seed = static_cast<uint64_t>(parse_int("data_seed", v));
              },
              [](const TrainConfig& c) { return std::to_string(c.data_seed); }},
        MACTOK_STRING_FIELD("backbone", backbone, "feature backbone: stub, or an external name"),
        MACTOK_INT_FIELD("feature_patch_size", feature_patch_size, "stub backbone patch size (0 = patch_size)"),
        MACTOK_INT_FIELD("log_every", log_every, "CSV/log interval in steps"),
        MACTOK_INT_FIELD("finetune_epochs", finetune_epochs, "decoder fine-tuning epochs"),
        MACTOK_DOUBLE_FIELD("finetune_lr", finetune_lr, "decoder fine-tuning learning rate"),
        MACTOK_STRING_FIELD("out_dir", out_dir, "run output directory"),
    };
    return table;
}

#undef MACTOK_INT_FIELD
#undef MACTOK_DOUBLE_FIELD
#undef MACTOK_STRING_FIELD

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    if (steps <= 0) throw ConfigError("steps must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (warmup_steps < 0 || warmup_steps >= steps) throw ConfigError("warmup_steps must lie in [0, steps)");
    if (!(mask_max >= 0.0 && mask_max <= 1.0)) throw ConfigError("mask_max must lie in [0, 1]");
    if (!(semantic_probability >= 0.0 && semantic_probability <= 1.0)) {
        throw ConfigError("semantic_probability must lie in [0, 1]");
    }
    if (weights.percep < 0 || weights.adv < 0 || weights.kl < 0 || weights.ra < 0) {
        throw ConfigError("loss weights must be nonnegative");
    }
    if (lr < 0 || finetune_lr < 0) throw ConfigError("learning rates must be nonnegative");
    if (weights.ra > 0) expansion_factor(model.patch_count(), model.latent_tokens);
}

void TrainConfig::apply(const KeyValues& kv) {
    for (const auto& [key, value] : kv) {
        const auto& table = fields();
        auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
        if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
        it->set(*this, value);
    }
}

KeyValues TrainConfig::to_key_values() const {
    KeyValues kv;
    for (const auto& f : fields()) kv[f.key] = f.get(*this);
    return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
    TrainConfig c;
    c.apply(kv);
    if (const char* env = std::getenv("MACTOK_SEED"); env && *env) {
        c.seed = static_cast<uint64_t>(parse_int("MACTOK_SEED", env));
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::from_file(const fs::path& path) { return from_key_values(read_key_values(path)); }

std::string TrainConfig::schema() {
    std::string out;
    const TrainConfig defaults;
    for (const auto& f : fields()) out += fmt::format("  {:<22} {} (default: {})\n", f.key, f.help, f.get(defaults));
    return out;
}

double lr_at(int64_t step, const TrainConfig& cfg) {
    if (step < 0) throw InvalidInputError("step must be nonnegative");
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
        return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    const auto span = static_cast<double>(cfg.steps - cfg.warmup_steps);
    const auto progress = std::clamp(static_cast<double>(step - cfg.warmup_steps) / span, 0.0, 1.0);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void RunLog::append(LossReport report) {
    if (!reports.empty() && report.step <= reports.back().step) {
        throw InvalidInputError("run log steps must be strictly increasing");
    }
    reports.push_back(std::move(report));
}

void RunLog::write_csv(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << loss_csv_header() << '\n';
    for (const auto& r : reports) out << loss_csv_row(r) << '\n';
}

std::shared_ptr<FeatureProvider> make_provider(const TrainConfig& cfg) {
    if (cfg.backbone == "stub") {
        const auto p = cfg.feature_patch_size > 0 ? cfg.feature_patch_size : cfg.model.patch_size;
        return std::make_shared<StubBackbone>(p, cfg.model.feature_dim, 0);
    }
    return std::make_shared<ExternalBackbone>(cfg.backbone);
}

Trainer::Trainer(TrainConfig cfg, std::shared_ptr<FeatureProvider> provider,
                 std::shared_ptr<AdversarialHook> adversarial)
    : cfg_(std::move(cfg)),
      provider_(std::move(provider)),
      adversarial_(std::move(adversarial)),
      mask_rng_(cfg_.seed * 0x9E3779B97F4A7C15ULL + 1),
      noise_gen_(at::detail::createCPUGenerator(cfg_.seed + 0x5EED)) {
    cfg_.validate();
    torch::manual_seed(cfg_.seed);
    model_ = MacTok(cfg_.model);
    if (!provider_) provider_ = make_provider(cfg_);
    targets_ = provider_;
    if (const char* env = std::getenv("FEATURE_CACHE_DIR"); env && *env) {
        targets_ = std::make_shared<CachedProvider>(provider_, FeatureCache(env));
    }
    if (!adversarial_) adversarial_ = std::make_shared<AdversarialHook>();
    optimizer_ = std::make_unique<torch::optim::AdamW>(
        model_->parameters(),
        torch::optim::AdamWOptions(cfg_.lr).betas({cfg_.beta1, cfg_.beta2}).weight_decay(cfg_.weight_decay));
}

void Trainer::restore(MacTok& source, int64_t step) {
    if (step < 0 || step >= cfg_.steps) throw ConfigError("resume step must lie in [0, steps)");
    auto src = source->named_parameters(true);
    auto dst = model_->named_parameters(true);
    if (src.size() != dst.size()) throw ConfigError("checkpoint architecture does not match the config");
    torch::NoGradGuard no_grad;
    for (auto& item : dst) {
        const auto* from = src.find(item.key());
        if (from == nullptr || from->sizes() != item.value().sizes()) {
            throw ConfigError("checkpoint tensor '" + item.key() + "' does not match the config");
        }
        item.value().copy_(*from);
    }
    step_ = step;
}

std::vector<MaskPlan> Trainer::make_plans(const FeatureBundle& clean, int64_t batch, std::string* strategy_tag,
                                          double* mean_ratio) {
    const auto grid = cfg_.model.grid();
    const StrategyMix mix{cfg_.semantic_probability};
    std::vector<MaskPlan> plans;
    bool saw_random = false, saw_semantic = false;
    double ratio_sum = 0.0;
    for (int64_t i = 0; i < batch; ++i) {
        const auto strategy = choose_strategy(mask_rng_, mix);
        const auto m = sample_ratio(cfg_.mask_max, mask_rng_);
        if (strategy == MaskStrategy::random) {
            plans.push_back(plan_random(grid.count(), m, mask_rng_));
            saw_random = true;
        } else {
            auto scores = resample_scores(relevance_scores(clean, i), clean.grid, grid);
            plans.push_back(plan_semantic(scores, m));
            saw_semantic = true;
        }
        ratio_sum += m;
    }
    *strategy_tag = saw_random && saw_semantic ? "mixed" : (saw_semantic ? "semantic" : "random");
    *mean_ratio = ratio_sum / static_cast<double>(batch);
    return plans;
}

torch::Tensor Trainer::mask_latents(const torch::Tensor& zhat, double* mean_ratio) {
    const auto b = zhat.size(0), l = zhat.size(1);
    auto keep = torch::ones({b, l, 1}, torch::kFloat32);
    auto acc = keep.accessor<float, 3>();
    double ratio_sum = 0.0;
    for (int64_t i = 0; i < b; ++i) {
        const auto m = sample_ratio(cfg_.mask_max, mask_rng_);
        for (auto idx : plan_random(l, m, mask_rng_).indices) acc[i][idx][0] = 0.0f;
        ratio_sum += m;
    }
    *mean_ratio = ratio_sum / static_cast<double>(b);
    return zhat * keep.to(zhat.scalar_type());
}

LossReport Trainer::train_step(const ImageBatch& batch) {
    model_->train();
    const auto b = batch.batch();
    const auto& w = cfg_.weights;
    const bool image_masking = cfg_.masking == MaskingMode::image && cfg_.masking_enabled();
    const bool need_clean = w.ra > 0.0 || (image_masking && cfg_.semantic_probability > 0.0);

    FeatureBundle clean;
    if (need_clean) {
        torch::NoGradGuard no_grad;
        clean = targets_->extract(batch);
    }

    std::string tag = "none";
    double ratio = 0.0;
    auto seq = model_->encoder->embed(batch);
    if (image_masking) {
        auto plans = make_plans(clean, b, &tag, &ratio);
        seq = apply_mask(seq, plans, model_->encoder->mask_token());
    }
    auto posterior = model_->encoder->encode(seq);
    auto noise = torch::randn(posterior.mu.sizes(), noise_gen_, posterior.mu.options().requires_grad(false));
    auto zhat = reparameterize(posterior, noise);
    auto zdec = zhat;
    if (cfg_.masking == MaskingMode::latent && cfg_.masking_enabled()) {
        zdec = mask_latents(zhat, &ratio);
        tag = "latent";
    }
    auto xhat = model_->decoder->decode(zdec);

    auto zero = torch::zeros({}, xhat.pixels.options());
    auto recon = recon_loss(xhat, batch);
    auto percep = w.percep > 0.0 ? percep_loss(xhat, batch, *provider_) : zero;
    torch::Tensor adv = zero;
    if (w.adv > 0.0) {
        try {
            adv = adversarial_->generator_loss(xhat);
        } catch (const AdversarialHookError&) {
            throw;
        } catch (const std::exception& e) {
            throw AdversarialHookError(e.what());
        }
    }
    auto kl = kl_loss(posterior);
    AlignmentResult ra{zero, 0};
    if (w.ra > 0.0) {
        auto patches = resample_patch_grid(clean.patches, clean.grid, cfg_.model.grid());
        ra = alignment_loss(zhat, FeatureBundle{clean.cls, patches, cfg_.model.grid()}, model_->heads);
    }

    auto per_dim_t = kl.per_dim.detach().to(torch::kFloat64).contiguous();
    std::vector<double> per_dim(per_dim_t.data_ptr<double>(), per_dim_t.data_ptr<double>() + per_dim_t.numel());
    LossParts parts{recon.item<double>(), percep.item<double>(), adv.item<double>(), kl.total.item<double>(),
                    ra.loss.item<double>()};
    LossReport report;
    try {
        report = composite(parts, w, std::move(per_dim));
    } catch (const DivergenceError& e) {
        throw DivergenceError(e.term(), last_checkpoint_);
    }

    auto loss = composite_tensor(recon, percep, adv, kl.total, ra.loss, w);
    optimizer_->zero_grad();
    loss.backward();
    if (cfg_.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model_->parameters(), cfg_.grad_clip);
    const auto lr = lr_at(step_, cfg_);
    for (auto& group : optimizer_->param_groups()) {
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    }
    optimizer_->step();
    if (w.adv > 0.0 && adversarial_->active()) adversarial_->discriminator_step(batch, ImageBatch{xhat.pixels.detach()});

    report.step = ++step_;
    report.mask_ratio_used = ratio;
    report.strategy = tag;
    report.zero_norm_warnings = ra.zero_norm_pairs;
    return report;
}

RunLog Trainer::fit(const Dataset& data, const std::function<void(const LossReport&)>& on_step) {
    BatchSampler sampler(data.size(), cfg_.batch_size, cfg_.seed ^ 0xDA7AULL);
    RunLog log;
    while (step_ < cfg_.steps) {
        const auto idx = sampler.next();
        auto report = train_step(data.batch(idx));
        if (on_step) on_step(report);
        log.append(std::move(report));
    }
    return log;
}

ReconstructionScore evaluate_reconstruction(MacTok& model, const Dataset& data, int64_t batch_size) {
    torch::NoGradGuard no_grad;
    model->eval();
    double se = 0.0, ae = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < data.size(); i += batch_size) {
        auto x = data.images.slice(0, i, std::min(i + batch_size, data.size()));
        auto xhat = model->reconstruct(ImageBatch{x}).pixels;
        auto diff = (xhat - x).to(torch::kFloat64);
        se += diff.pow(2).sum().item<double>();
        ae += diff.abs().sum().item<double>();
        count += x.numel();
    }
    model->train();
    return {se / static_cast<double>(count), ae / static_cast<double>(count)};
}

LatentStatistics latent_statistics(MacTok& model, const Dataset& data, int64_t batch_size) {
    torch::NoGradGuard no_grad;
    model->eval();
    std::vector<torch::Tensor> pooled;
    torch::Tensor per_dim_sum;
    double kl_sum = 0.0;
    for (int64_t i = 0; i < data.size(); i += batch_size) {
        auto x = data.images.slice(0, i, std::min(i + batch_size, data.size()));
        auto post = model->encoder->encode(model->encoder->embed(ImageBatch{x}));
        auto terms = kl_loss(post);
        const auto n = static_cast<double>(x.size(0));
        kl_sum += terms.total.item<double>() * n;
        auto pd = terms.per_dim.to(torch::kFloat64) * n;
        per_dim_sum = per_dim_sum.defined() ? per_dim_sum + pd : pd;
        pooled.push_back(pool_global(post.mu).to(torch::kFloat64));
    }
    model->train();
    LatentStatistics s;
    const auto m = static_cast<double>(data.size());
    s.kl = kl_sum / m;
    auto pd = (per_dim_sum / m).contiguous();
    s.kl_per_dim.assign(pd.data_ptr<double>(), pd.data_ptr<double>() + pd.numel());
    s.active_dim_fraction = active_dim_fraction(s.kl_per_dim);
    s.pooled_mu = torch::cat(pooled);
    return s;
}

RunLog finetune_decoder(MacTok& model, const Dataset& data, int64_t epochs, const TrainConfig& cfg,
                        FeatureProvider& provider) {
    if (epochs < 0) throw ConfigError("epochs must be nonnegative");
    RunLog log;
    if (epochs == 0 || data.size() == 0) return log;

    std::vector<std::pair<torch::Tensor, bool>> frozen;
    for (auto& p : model->encoder->parameters()) frozen.emplace_back(p, p.requires_grad());
    for (auto& p : model->heads->parameters()) frozen.emplace_back(p, p.requires_grad());
    for (auto& [p, _] : frozen) p.set_requires_grad(false);

    torch::optim::AdamW opt(model->decoder->parameters(), torch::optim::AdamWOptions(cfg.finetune_lr)
                                                              .betas({cfg.beta1, cfg.beta2})
                                                              .weight_decay(cfg.weight_decay));
    const auto steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
    BatchSampler sampler(data.size(), std::min(cfg.batch_size, data.size()), cfg.seed ^ 0xF1AEULL);
    const auto& w = cfg.weights;
    model->train();
    for (int64_t step = 1; step <= epochs * steps_per_epoch; ++step) {
        auto batch = data.batch(sampler.next());
        torch::Tensor mu;
        {
            torch::NoGradGuard no_grad;
            mu = model->encoder->encode(model->encoder->embed(batch)).mu;
        }
        auto xhat = model->decoder->decode(mu);
        auto zero = torch::zeros({}, xhat.pixels.options());
        auto recon = recon_loss(xhat, batch);
        auto percep = w.percep > 0.0 ? percep_loss(xhat, batch, provider) : zero;
        auto loss = recon + w.percep * percep;
        opt.zero_grad();
        loss.backward();
        if (cfg.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model->decoder->parameters(), cfg.grad_clip);
        opt.step();
        auto report = composite({recon.item<double>(), percep.item<double>(), 0.0, 0.0, 0.0},
                                LossWeights{w.percep, 0.0, 0.0, 0.0});
        report.step = step;
        log.append(std::move(report));
    }
    for (auto& [p, flag] : frozen) p.set_requires_grad(flag);
    return log;
}

std::vector<SweepResult> ablation_sweep(const std::vector<SweepCell>& cells, const TrainConfig& cfg,
                                        const Dataset& train, const Dataset& validation) {
    std::vector<SweepResult> results;
    for (const auto& cell : cells) {
        SweepResult r;
        r.cell = cell;
        try {
            auto c = cfg;
            c.mask_max = cell.mask_max;
            c.semantic_probability = cell.semantic_probability;
            if (cell.mask_max == 0.0) c.masking = MaskingMode::none;
            Trainer trainer(c);
            r.log = trainer.fit(train);
            r.validation = evaluate_reconstruction(trainer.model(), validation);
            auto stats = latent_statistics(trainer.model(), validation);
            r.final_kl = stats.kl;
            r.final_active_dim_fraction = stats.active_dim_fraction;
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        results.push_back(std::move(r));
    }
    return results;
}

std::string sweep_csv(const std::vector<SweepResult>& results) {
    std::string out =
        "label,mask_max,semantic_probability,final_train_recon,val_mse,val_mae,val_kl,active_dim_fraction,error\n";
    for (const auto& r : results) {
        const double train_recon = r.log.reports.empty() ? std::nan("") : r.log.reports.back().recon;
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.cell.label, r.cell.mask_max, r.cell.semantic_probability,
                           train_recon, r.validation.mse, r.validation.mae, r.final_kl, r.final_active_dim_fraction,
                           r.error.value_or(""));
    }
    return out;
}

}  // namespace mactok
