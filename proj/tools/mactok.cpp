// mactok command-line entry point.
//
// Exit codes: 0 success, 1 domain error (bad config, unreadable input,
// divergence), 2 usage error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <torch/torch.h>

#include "mactok/checkpoint.hpp"
#include "mactok/collapse_lab.hpp"
#include "mactok/config.hpp"
#include "mactok/data.hpp"
#include "mactok/error.hpp"
#include "mactok/evaluation.hpp"
#include "mactok/features.hpp"
#include "mactok/image.hpp"
#include "mactok/masking.hpp"
#include "mactok/plot.hpp"
#include "mactok/run_manifest.hpp"
#include "mactok/training.hpp"

namespace fs = std::filesystem;
using namespace mactok;

namespace {

std::vector<double> parse_double_list(const std::string& key, const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(parse_double(key, item));
    }
    if (out.empty()) throw ConfigError("'" + key + "' needs at least one value");
    return out;
}

KeyValues parse_overrides(const std::vector<std::string>& sets) {
    KeyValues kv;
    for (const auto& s : sets) {
        auto parsed = parse_key_values(s, "--set");
        kv.insert(parsed.begin(), parsed.end());
    }
    return kv;
}

TrainConfig load_config(const std::string& path, const std::vector<std::string>& sets, std::optional<uint64_t> seed) {
    KeyValues kv = path.empty() ? KeyValues{} : read_key_values(path);
    for (const auto& [k, v] : parse_overrides(sets)) kv[k] = v;
    auto cfg = TrainConfig::from_key_values(kv);
    if (seed) cfg.seed = *seed;
    return cfg;
}

std::ofstream open_out(RunManifest& manifest, const std::string& name) {
    const auto path = manifest.dir() / name;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    manifest.add_output(path);
    return out;
}

void write_text(RunManifest& manifest, const std::string& name, const std::string& text) {
    auto out = open_out(manifest, name);
    out << text;
}

Dataset load_data(const TrainConfig& cfg, const std::string& override_source = "", int64_t count = -1,
                  std::optional<uint64_t> seed = std::nullopt) {
    const auto& source = override_source.empty() ? cfg.data : override_source;
    return load_dataset(source, count >= 0 ? count : cfg.data_count, cfg.model.image_size, seed.value_or(cfg.data_seed));
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config, resume, out;
    std::vector<std::string> sets;
    std::optional<uint64_t> seed;
    int64_t checkpoint_every = 0;
};

int run_train(const TrainArgs& a) {
    auto cfg = load_config(a.config, a.sets, a.seed);
    const fs::path out_dir = a.out.empty() ? fs::path(cfg.out_dir) : fs::path(a.out);
    RunManifest manifest(out_dir, "train", cfg.to_key_values(), cfg.seed);
    manifest.begin();

    auto data = load_data(cfg);
    Trainer trainer(cfg);
    if (!a.resume.empty()) {
        auto ckpt = load_checkpoint(a.resume);
        trainer.restore(ckpt.model, ckpt.step);
        trainer.set_last_checkpoint(a.resume);
        manifest.note("resumed_from", a.resume);
    }
    auto csv = open_out(manifest, "losses.csv");
    csv << loss_csv_header() << '\n';
    RunLog log;
    const auto ckpt_dir = out_dir / "checkpoint";
    try {
        log = trainer.fit(data, [&](const LossReport& r) {
            csv << loss_csv_row(r) << '\n';
            if (cfg.log_every > 0 && (r.step % cfg.log_every == 0 || r.step == cfg.steps)) {
                csv.flush();
                std::cerr << fmt::format("step {:>6}  total {:.5f}  recon {:.5f}  kl {:.3f}  active {:.2f}\n", r.step,
                                         r.total, r.recon, r.kl, r.active_dim_fraction);
            }
            if (a.checkpoint_every > 0 && r.step % a.checkpoint_every == 0 && r.step < cfg.steps) {
                save_checkpoint(ckpt_dir, trainer.model(), cfg, r.step);
                trainer.set_last_checkpoint(ckpt_dir.string());
            }
        });
    } catch (const DivergenceError&) {
        manifest.finish("diverged");
        throw;
    }
    save_checkpoint(ckpt_dir, trainer.model(), cfg, trainer.step());
    manifest.add_output(ckpt_dir / "manifest.json");
    const auto score = evaluate_reconstruction(trainer.model(), data);
    manifest.note("train_mse", fmt::format("{}", score.mse));
    manifest.note("parameter_digest", parameter_digest(*trainer.model()));
    manifest.finish();
    std::cout << fmt::format("trained {} steps; train MSE {:.6f}; checkpoint {}\n", trainer.step(), score.mse,
                             ckpt_dir.string());
    return 0;
}

// ---------------------------------------------------------------- finetune-decoder

struct FinetuneArgs {
    std::string ckpt, out, data;
    std::optional<int64_t> epochs;
    int64_t holdout = 64;
    uint64_t holdout_seed = 987654321;
};

int run_finetune(const FinetuneArgs& a) {
    auto ckpt = load_checkpoint(a.ckpt);
    auto& cfg = ckpt.config;
    const auto epochs = a.epochs.value_or(cfg.finetune_epochs);
    const fs::path out_dir = a.out.empty() ? fs::path(a.ckpt).parent_path() / "finetune" : fs::path(a.out);
    RunManifest manifest(out_dir, "finetune-decoder", cfg.to_key_values(), cfg.seed);
    manifest.begin();
    manifest.note("source_checkpoint", a.ckpt);
    manifest.note("epochs", std::to_string(epochs));

    auto data = load_data(cfg, a.data);
    auto heldout = load_dataset("synthetic:shapes", a.holdout, cfg.model.image_size, a.holdout_seed);
    if (!a.data.empty() && a.data.rfind("synthetic:", 0) != 0) heldout = data;
    const auto encoder_before = parameter_digest(*ckpt.model->encoder);
    const auto before = evaluate_reconstruction(ckpt.model, heldout);
    auto provider = make_provider(cfg);
    auto log = finetune_decoder(ckpt.model, data, epochs, cfg, *provider);
    const auto after = evaluate_reconstruction(ckpt.model, heldout);
    if (parameter_digest(*ckpt.model->encoder) != encoder_before) throw Error("encoder changed during fine-tuning");

    log.write_csv(out_dir / "finetune.csv");
    manifest.add_output(out_dir / "finetune.csv");
    write_text(manifest, "evaluation.csv",
               fmt::format("stage,heldout_mse,heldout_mae\nbefore,{},{}\nafter,{},{}\n", before.mse, before.mae,
                           after.mse, after.mae));
    save_checkpoint(out_dir / "checkpoint", ckpt.model, cfg, ckpt.step);
    manifest.add_output(out_dir / "checkpoint" / "manifest.json");
    manifest.finish();
    std::cout << fmt::format("held-out MSE {:.6f} -> {:.6f}\n", before.mse, after.mse);
    return 0;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
    std::string grid, config, out;
    std::optional<uint64_t> seed;
    int64_t val_count = 64;
    uint64_t val_seed = 555;
};

int run_sweep(const SweepArgs& a) {
    auto grid = read_key_values(a.grid);
    std::vector<double> ratios{0.7}, mixes{0.5};
    if (auto it = grid.find("mask_max"); it != grid.end()) {
        ratios = parse_double_list("mask_max", it->second);
        grid.erase(it);
    }
    if (auto it = grid.find("semantic_probability"); it != grid.end()) {
        mixes = parse_double_list("semantic_probability", it->second);
        grid.erase(it);
    }
    KeyValues kv = a.config.empty() ? KeyValues{} : read_key_values(a.config);
    for (const auto& [k, v] : grid) kv[k] = v;
    auto cfg = TrainConfig::from_key_values(kv);
    if (a.seed) cfg.seed = *a.seed;
    const fs::path out_dir = a.out.empty() ? fs::path(cfg.out_dir) : fs::path(a.out);
    RunManifest manifest(out_dir, "sweep", cfg.to_key_values(), cfg.seed);
    manifest.begin();

    std::vector<SweepCell> cells;
    for (double m : ratios) {
        for (double p : mixes) cells.push_back({m, p, fmt::format("M={}_sem={}", m, p)});
    }
    auto train = load_data(cfg);
    auto val = load_dataset("synthetic:shapes", a.val_count, cfg.model.image_size, a.val_seed);
    auto results = ablation_sweep(cells, cfg, train, val);
    write_text(manifest, "sweep.csv", sweep_csv(results));
    for (size_t i = 0; i < results.size(); ++i) {
        const auto name = fmt::format("cell{:02d}_losses.csv", i);
        results[i].log.write_csv(out_dir / name);
        manifest.add_output(out_dir / name);
        if (results[i].error) std::cerr << "cell " << results[i].cell.label << " failed: " << *results[i].error << '\n';
    }
    manifest.finish();
    std::cout << sweep_csv(results);
    return 0;
}

// ---------------------------------------------------------------- reconstruct

int run_reconstruct(const std::string& ckpt_path, const std::string& images, const std::string& out) {
    auto ckpt = load_checkpoint(ckpt_path);
    RunManifest manifest(out, "reconstruct", ckpt.config.to_key_values(), ckpt.config.seed);
    manifest.begin();
    manifest.note("inference", "posterior mean");
    auto csv = open_out(manifest, "metrics.csv");
    csv << "file,psnr,ssim,status\n";
    torch::NoGradGuard no_grad;
    ckpt.model->eval();
    for (const auto& path : list_images(images)) {
        const auto name = path.filename().string();
        try {
            const auto img = read_image(path);
            auto batch = to_batch(std::span<const RgbImage>(&img, 1));
            auto recon = to_rgb(ckpt.model->reconstruct(batch).pixels[0]);
            const auto target = out / fs::path(name).replace_extension(".png");
            write_png(target, recon);
            manifest.add_output(target);
            csv << fmt::format("{},{},{},ok\n", name, format_metric(psnr(recon, img)), format_metric(ssim(recon, img)));
        } catch (const Error& e) {
            std::cerr << "warning: skipped " << name << ": " << e.what() << '\n';
            std::string msg = e.what();
            std::replace(msg.begin(), msg.end(), ',', ';');
            csv << fmt::format("{},,,skipped: {}\n", name, msg);
        }
    }
    csv.close();
    manifest.finish();
    return 0;
}

// ---------------------------------------------------------------- mask-preview

struct PreviewArgs {
    std::string image, out, strategy = "random";
    std::optional<double> ratio;
    double max_ratio = 0.7;
    int64_t patch_size = 4;
    uint64_t seed = 0;
};

int run_mask_preview(const PreviewArgs& a) {
    KeyValues snapshot{{"image", a.image},
                       {"strategy", a.strategy},
                       {"patch_size", std::to_string(a.patch_size)},
                       {"max_ratio", fmt::format("{}", a.max_ratio)}};
    if (a.ratio) snapshot["ratio"] = fmt::format("{}", *a.ratio);
    RunManifest manifest(a.out, "mask-preview", snapshot, a.seed);
    manifest.begin();
    auto img = read_image(a.image);
    const auto grid = patch_grid(img.height, img.width, a.patch_size);
    Rng rng(a.seed);
    const double m = a.ratio ? *a.ratio : sample_ratio(a.max_ratio, rng);
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("ratio must lie in [0, 1]");
    MaskPlan plan;
    if (a.strategy == "random") {
        plan = plan_random(grid.count(), m, rng);
    } else if (a.strategy == "semantic") {
        StubBackbone backbone(a.patch_size);
        auto bundle = backbone.extract(to_batch(std::span<const RgbImage>(&img, 1)));
        plan = plan_semantic(relevance_scores(bundle), m);
    } else {
        throw ConfigError("strategy must be random or semantic, got '" + a.strategy + "'");
    }
    auto overlay = img;
    for (auto idx : plan.indices) {
        const auto r0 = (idx / grid.cols) * a.patch_size, c0 = (idx % grid.cols) * a.patch_size;
        for (int64_t y = r0; y < r0 + a.patch_size; ++y) {
            for (int64_t x = c0; x < c0 + a.patch_size; ++x) {
                for (int64_t ch = 0; ch < 3; ++ch) {
                    auto& v = overlay.data[static_cast<size_t>((y * img.width + x) * 3 + ch)];
                    v = static_cast<uint8_t>((static_cast<int>(v) + 128) / 2);
                }
            }
        }
    }
    write_png(manifest.dir() / "overlay.png", overlay);
    manifest.add_output(manifest.dir() / "overlay.png");
    std::string listing = fmt::format("strategy {}\nratio {}\ntokens {}\nmasked {}\nindices", to_string(plan.strategy),
                                      m, grid.count(), plan.indices.size());
    for (auto i : plan.indices) listing += fmt::format(" {}", i);
    write_text(manifest, "mask.txt", listing + "\n");
    manifest.finish();
    return 0;
}

// ---------------------------------------------------------------- collapse-sim

struct CollapseArgs {
    std::string world, betas = "0.1,0.5,1,2", fractions = "0.25,0.5,0.75", out;
};

int run_collapse_sim(const CollapseArgs& a) {
    KeyValues w = a.world.empty() ? KeyValues{} : read_key_values(a.world);
    auto take = [&](const std::string& key, const std::string& fallback) {
        auto it = w.find(key);
        std::string v = it == w.end() ? fallback : it->second;
        if (it != w.end()) w.erase(it);
        return v;
    };
    const auto dim = parse_int("dim", take("dim", "4"));
    const auto rho = parse_double("rho", take("rho", "0.6"));
    const auto tau2 = parse_double("tau2", take("tau2", "0.1"));
    const auto samples = parse_int("samples", take("samples", "1000000"));
    const auto seed = static_cast<uint64_t>(parse_int("seed", take("seed", "0")));
    const auto scoring = scoring_from_string(take("scoring", "masked_only"));
    if (!w.empty()) throw ConfigError("unknown world key '" + w.begin()->first + "'");
    if (dim < 1 || dim > 64) throw ConfigError("dim must lie in [1, 64]");

    const auto betas = parse_double_list("betas", a.betas);
    const auto fractions = parse_double_list("fractions", a.fractions);
    KeyValues snapshot{{"dim", std::to_string(dim)},          {"rho", fmt::format("{}", rho)},
                       {"tau2", fmt::format("{}", tau2)},     {"samples", std::to_string(samples)},
                       {"scoring", std::string(to_string(scoring))}, {"betas", a.betas},
                       {"fractions", a.fractions}};
    RunManifest manifest(a.out, "collapse-sim", snapshot, seed);
    manifest.begin();
    manifest.note("scoring", std::string(to_string(scoring)));

    const auto sigma = GaussianWorld::equicorrelated(static_cast<int>(dim), rho, {}).sigma;
    const auto curve = delta_vs_mask_curve(sigma, fractions, samples, seed, scoring, tau2);
    write_text(manifest, "curves.csv", curve_csv(curve));

    std::string verdicts = "fraction,hidden,beta,delta,delta_std_error,epsilon,margin,collapsed_optimal\n";
    for (const auto& p : curve) {
        std::vector<int> hidden(static_cast<size_t>(p.hidden));
        for (int j = 0; j < p.hidden; ++j) hidden[static_cast<size_t>(j)] = j;
        GaussianWorld world{sigma, hidden};
        const auto eps = kl_cost(world, GaussianEncoder::identity(world, tau2));
        for (double beta : betas) {
            if (!(eps > 0.0)) {
                verdicts += fmt::format("{},{},{},{},{},{},,n/a\n", p.fraction, p.hidden, beta, p.delta.value,
                                        p.delta.std_error, eps);
                continue;
            }
            const auto v = collapse_condition(p.delta.value, eps, beta);
            verdicts += fmt::format("{},{},{},{},{},{},{},{}\n", p.fraction, p.hidden, beta, v.delta,
                                    p.delta.std_error, v.epsilon, v.margin, v.collapsed_optimal ? "true" : "false");
        }
    }
    write_text(manifest, "verdicts.csv", verdicts);
    manifest.finish();
    std::cout << verdicts;
    return 0;
}

// ---------------------------------------------------------------- kl-compare

int run_kl_compare(const std::string& config, const std::vector<std::string>& sets, std::optional<uint64_t> seed,
                   const std::string& out) {
    auto cfg = load_config(config, sets, seed);
    const fs::path out_dir = out.empty() ? fs::path(cfg.out_dir) : fs::path(out);
    RunManifest manifest(out_dir, "kl-compare", cfg.to_key_values(), cfg.seed);
    manifest.begin();
    auto data = load_data(cfg);
    auto arms = kl_dynamics_compare(cfg, data);
    std::vector<PlotSeries> series;
    std::string summary = "arm,final_step_kl,eval_kl,eval_active_dim_fraction\n";
    for (const auto& arm : arms) {
        const auto name = fmt::format("kl_{}.csv", to_string(arm.mode));
        arm.log.write_csv(out_dir / name);
        manifest.add_output(out_dir / name);
        PlotSeries s{std::string(to_string(arm.mode)), {}, {}};
        for (const auto& r : arm.log.reports) {
            s.x.push_back(static_cast<double>(r.step));
            s.y.push_back(r.kl);
        }
        series.push_back(std::move(s));
        summary += fmt::format("{},{},{},{}\n", to_string(arm.mode), arm.log.reports.back().kl, arm.final_stats.kl,
                               arm.final_stats.active_dim_fraction);
    }
    write_text(manifest, "summary.csv", summary);
    try {
        write_line_plot(out_dir / "kl_compare.png", series);
        manifest.add_output(out_dir / "kl_compare.png");
    } catch (const std::exception& e) {
        std::cerr << "warning: plot failed: " << e.what() << '\n';
    }
    manifest.finish();
    std::cout << summary;
    return 0;
}

// ---------------------------------------------------------------- metrics

int run_metrics(const std::string& real, const std::string& recon, const std::string& out, const std::string& backbone) {
    std::string report = "file,psnr,ssim\n";
    const auto files = list_images(real);
    for (const auto& path : files) {
        const auto other = fs::path(recon) / path.filename();
        fs::path match = other;
        if (!fs::exists(match)) match = fs::path(recon) / path.filename().replace_extension(".png");
        if (!fs::exists(match)) throw IoError("no reconstruction for " + path.filename().string());
        const auto a = read_image(path), b = read_image(match);
        report += fmt::format("{},{},{}\n", path.filename().string(), format_metric(psnr(b, a)), format_metric(ssim(b, a)));
    }
    std::unique_ptr<FeatureProvider> provider;
    if (backbone == "stub") {
        provider = std::make_unique<StubBackbone>(4);
    } else if (!backbone.empty()) {
        provider = std::make_unique<ExternalBackbone>(backbone);
    }
    const auto fid = files.empty() ? std::nullopt : rfid_hook(real, recon, provider.get());
    report += fmt::format("rfid,{},\n", fid ? format_metric(*fid) : "n/a");
    std::ofstream f(out);
    if (!f) throw IoError("cannot write " + out);
    f << report;
    return 0;
}

// ---------------------------------------------------------------- probe / project

LatentStatistics checkpoint_latents(const std::string& ckpt_path, const std::string& data_source, int64_t count,
                                    Dataset* data_out, TrainConfig* cfg_out) {
    auto ckpt = load_checkpoint(ckpt_path);
    *data_out = load_data(ckpt.config, data_source, count);
    *cfg_out = ckpt.config;
    return latent_statistics(ckpt.model, *data_out);
}

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
    auto d = t.to(torch::kFloat64).contiguous();
    Eigen::MatrixXd m(d.size(0), d.size(1));
    auto acc = d.accessor<double, 2>();
    for (int64_t i = 0; i < d.size(0); ++i) {
        for (int64_t j = 0; j < d.size(1); ++j) m(i, j) = acc[i][j];
    }
    return m;
}

int run_probe(const std::string& ckpt, const std::string& data, int64_t count, uint64_t seed, const std::string& out) {
    Dataset ds;
    TrainConfig cfg;
    auto stats = checkpoint_latents(ckpt, data, count, &ds, &cfg);
    if (!ds.labeled()) throw InvalidInputError("probing needs a labeled dataset (class subdirectories)");
    ProbeOptions opt;
    opt.seed = seed;
    const auto r = linear_probe(to_eigen(stats.pooled_mu), ds.labels, opt);
    std::ofstream f(out);
    if (!f) throw IoError("cannot write " + out);
    f << "accuracy,train_accuracy,classes,train_size,validation_size,iterations,representation\n"
      << fmt::format("{},{},{},{},{},{},{}\n", r.accuracy, r.train_accuracy, r.classes, r.train_size, r.validation_size,
                     r.iterations, r.representation);
    std::cout << fmt::format("probe accuracy {:.4f}\n", r.accuracy);
    return 0;
}

int run_project(const std::string& ckpt, const std::string& data, int64_t count, const std::string& out) {
    Dataset ds;
    TrainConfig cfg;
    auto stats = checkpoint_latents(ckpt, data, count, &ds, &cfg);
    const auto p = pca_2d(to_eigen(stats.pooled_mu));
    std::ofstream f(out);
    if (!f) throw IoError("cannot write " + out);
    f << "index,label,pc1,pc2\n";
    for (Eigen::Index i = 0; i < p.coords.rows(); ++i) {
        const auto label = ds.labeled() ? std::to_string(ds.labels[static_cast<size_t>(i)]) : std::string();
        f << fmt::format("{},{},{},{}\n", i, label, p.coords(i, 0), p.coords(i, 1));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    CLI::App app{"MacTok: masked 1D continuous image tokenizer and posterior-collapse lab"};
    app.require_subcommand(1);
    app.footer("Environment: MACTOK_SEED overrides the config seed; FEATURE_CACHE_DIR enables the feature cache.");

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train a tokenizer");
    c_train->add_option("--config", train.config, "key=value config file (see `mactok config-keys`)");
    c_train->add_option("--set", train.sets, "override one config key, key=value (repeatable)");
    c_train->add_option("--seed", train.seed, "run seed (overrides MACTOK_SEED and the config)");
    c_train->add_option("--resume", train.resume, "checkpoint directory to continue from");
    c_train->add_option("--out", train.out, "run directory (default: out_dir from the config)");
    c_train->add_option("--checkpoint-every", train.checkpoint_every, "intermediate checkpoint interval in steps");

    auto* c_keys = app.add_subcommand("config-keys", "List accepted config keys with defaults");

    FinetuneArgs ft;
    auto* c_ft = app.add_subcommand("finetune-decoder", "Fine-tune the decoder with the encoder frozen, no masking");
    c_ft->add_option("--ckpt", ft.ckpt, "checkpoint directory")->required();
    c_ft->add_option("--epochs", ft.epochs, "epochs (default: finetune_epochs from the checkpoint config)");
    c_ft->add_option("--data", ft.data, "training images (default: the checkpoint's data source)");
    c_ft->add_option("--holdout", ft.holdout, "held-out synthetic images for the before/after score");
    c_ft->add_option("--out", ft.out, "output directory");

    SweepArgs sw;
    auto* c_sw = app.add_subcommand("sweep", "Mask-ratio / strategy-mix ablation");
    c_sw->add_option("--grid", sw.grid, "key=value file; mask_max and semantic_probability take comma lists")
        ->required();
    c_sw->add_option("--config", sw.config, "base config file");
    c_sw->add_option("--seed", sw.seed, "shared seed for every cell");
    c_sw->add_option("--val-count", sw.val_count, "validation images");
    c_sw->add_option("--out", sw.out, "output directory");

    std::string rc_ckpt, rc_images, rc_out;
    auto* c_rc = app.add_subcommand("reconstruct", "Reconstruct a directory of images and score them");
    c_rc->add_option("--ckpt", rc_ckpt, "checkpoint directory")->required();
    c_rc->add_option("--images", rc_images, "input image directory (PPM/PNG)")->required();
    c_rc->add_option("--out", rc_out, "output directory")->required();

    PreviewArgs pv;
    auto* c_pv = app.add_subcommand("mask-preview", "Render a mask plan over an image");
    c_pv->add_option("--image", pv.image, "input image")->required();
    c_pv->add_option("--out", pv.out, "output directory")->required();
    c_pv->add_option("--strategy", pv.strategy, "random | semantic");
    c_pv->add_option("--ratio", pv.ratio, "mask ratio m (default: sampled from [-0.1, M] clipped)");
    c_pv->add_option("--max-ratio", pv.max_ratio, "M for the sampled ratio");
    c_pv->add_option("--patch-size", pv.patch_size, "patch size P");
    c_pv->add_option("--seed", pv.seed, "sampling seed");

    CollapseArgs cs;
    auto* c_cs = app.add_subcommand("collapse-sim", "Gaussian collapse lab: delta curve and collapse verdicts");
    c_cs->add_option("--world", cs.world, "key=value file: dim, rho, tau2, samples, seed, scoring");
    c_cs->add_option("--betas", cs.betas, "comma-separated KL weights");
    c_cs->add_option("--fractions", cs.fractions, "comma-separated ascending mask fractions");
    c_cs->add_option("--out", cs.out, "output directory")->required();

    std::string kc_config, kc_out;
    std::vector<std::string> kc_sets;
    std::optional<uint64_t> kc_seed;
    auto* c_kc = app.add_subcommand("kl-compare", "KL trajectories of unmasked, latent-masked and image-masked runs");
    c_kc->add_option("--config", kc_config, "config file");
    c_kc->add_option("--set", kc_sets, "override one config key (repeatable)");
    c_kc->add_option("--seed", kc_seed, "run seed");
    c_kc->add_option("--out", kc_out, "output directory");

    std::string mt_real, mt_recon, mt_out, mt_backbone;
    auto* c_mt = app.add_subcommand("metrics", "PSNR/SSIM per image pair plus rFID");
    c_mt->add_option("--real", mt_real, "reference images")->required();
    c_mt->add_option("--recon", mt_recon, "reconstructions with matching file names")->required();
    c_mt->add_option("--out", mt_out, "report CSV")->required();
    c_mt->add_option("--backbone", mt_backbone, "feature network for rFID (empty: n/a)");

    std::string pr_ckpt, pr_data, pr_out;
    int64_t pr_count = 0;
    uint64_t pr_seed = 0;
    auto* c_pr = app.add_subcommand("probe", "Linear probe on pooled posterior means");
    c_pr->add_option("--ckpt", pr_ckpt, "checkpoint directory")->required();
    c_pr->add_option("--data", pr_data, "labeled image directory or synthetic:shapes")->required();
    c_pr->add_option("--count", pr_count, "images to use (0: all / config data_count)");
    c_pr->add_option("--seed", pr_seed, "split seed");
    c_pr->add_option("--out", pr_out, "result CSV")->required();

    std::string pj_ckpt, pj_data, pj_out;
    int64_t pj_count = 0;
    auto* c_pj = app.add_subcommand("project", "2D PCA projection of pooled posterior means");
    c_pj->add_option("--ckpt", pj_ckpt, "checkpoint directory")->required();
    c_pj->add_option("--data", pj_data, "image directory or synthetic:shapes")->required();
    c_pj->add_option("--count", pj_count, "images to use");
    c_pj->add_option("--out", pj_out, "coordinates CSV")->required();

    std::string pl_csv, pl_x, pl_y, pl_out;
    auto* c_pl = app.add_subcommand("plot", "Line plot of CSV columns");
    c_pl->add_option("--csv", pl_csv, "input CSV")->required();
    c_pl->add_option("--x", pl_x, "x column")->required();
    c_pl->add_option("--y", pl_y, "comma-separated y columns")->required();
    c_pl->add_option("--out", pl_out, "output PNG")->required();

    std::string cp_out, cp_source = "synthetic:shapes";
    int64_t cp_count = 200, cp_size = 32;
    uint64_t cp_seed = 1234;
    auto* c_cp = app.add_subcommand("make-corpus", "Write the procedural labeled shapes corpus as PPM files");
    c_cp->add_option("--out", cp_out, "output directory")->required();
    c_cp->add_option("--count", cp_count, "images");
    c_cp->add_option("--size", cp_size, "image size");
    c_cp->add_option("--seed", cp_seed, "corpus seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (c_train->parsed()) return run_train(train);
        if (c_keys->parsed()) {
            std::cout << TrainConfig::schema();
            return 0;
        }
        if (c_ft->parsed()) return run_finetune(ft);
        if (c_sw->parsed()) return run_sweep(sw);
        if (c_rc->parsed()) return run_reconstruct(rc_ckpt, rc_images, rc_out);
        if (c_pv->parsed()) return run_mask_preview(pv);
        if (c_cs->parsed()) return run_collapse_sim(cs);
        if (c_kc->parsed()) return run_kl_compare(kc_config, kc_sets, kc_seed, kc_out);
        if (c_mt->parsed()) return run_metrics(mt_real, mt_recon, mt_out, mt_backbone);
        if (c_pr->parsed()) return run_probe(pr_ckpt, pr_data, pr_count, pr_seed, pr_out);
        if (c_pj->parsed()) return run_project(pj_ckpt, pj_data, pj_count, pj_out);
        if (c_pl->parsed()) {
            std::vector<std::string> ys;
            std::stringstream ss(pl_y);
            for (std::string s; std::getline(ss, s, ',');) ys.push_back(s);
            emit_plot(pl_csv, pl_x, ys, pl_out);
            return 0;
        }
        if (c_cp->parsed()) {
            write_dataset(cp_out, synthetic_shapes(cp_count, cp_size, cp_seed));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
