#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mactok/data.hpp"
#include "mactok/training.hpp"

namespace mactok {

/// Which coordinates the decoder is scored on.
///  - masked_only: only the hidden coordinates (the ρ-example convention)
///  - full:        every coordinate, visible and hidden
enum class Scoring { masked_only, full };

std::string_view to_string(Scoring s);
Scoring scoring_from_string(const std::string& s);

/// X ~ N(0, Σ) with a fixed set of hidden (masked) coordinates.
struct GaussianWorld {
    Eigen::MatrixXd sigma;
    std::vector<int> hidden;  // sorted

    int dim() const { return static_cast<int>(sigma.rows()); }
    std::vector<int> visible() const;
    /// Throws InvalidInputError when Σ is not symmetric positive definite or
    /// the hidden set is out of range.
    void validate() const;

    static GaussianWorld equicorrelated(int dim, double rho, std::vector<int> hidden);
};

/// q(Z | X̃) = N(G·x_V, τ²·I). `collapsed` replaces it with the prior N(0, I).
struct GaussianEncoder {
    Eigen::MatrixXd gain;  // [k, |V|]
    double tau2 = 0.0;
    bool collapsed = false;

    int latent_dim() const { return static_cast<int>(gain.rows()); }

    /// G = I over the visible coordinates.
    static GaussianEncoder identity(const GaussianWorld& world, double tau2);
    static GaussianEncoder prior(int latent_dim);
};

/// p(X_S | Z) = N(B·z + b, S) over the scored coordinates S.
struct AffineDecoder {
    std::vector<int> scored;
    Eigen::MatrixXd weight;  // [|S|, k]
    Eigen::VectorXd bias;    // [|S|]
    Eigen::MatrixXd cov;     // [|S|, |S|]
};

std::vector<int> scored_coordinates(const GaussianWorld& world, Scoring scoring);

/// The Bayes-optimal affine decoder for this encoder: the exact Gaussian
/// conditional of X_S given Z.
AffineDecoder exact_conditional_decoder(const GaussianWorld& world, const GaussianEncoder& encoder, Scoring scoring);

/// The unconditional model N(0, Σ_SS); ignores Z.
AffineDecoder marginal_decoder(const GaussianWorld& world, Scoring scoring);

/// Monte-Carlo mean with its standard error.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    int64_t samples = 0;
};

struct ElboEstimate {
    Estimate total;     // recon + β·KL, per-sample
    double recon = 0.0; // mean −log p(X_S | Z)
    double kl = 0.0;    // mean KL(q(Z | X̃) ‖ p(Z))
};

/// E[ E_q[−log p(X_S | Z)] + β·KL(q(Z | X̃) ‖ N(0, I)) ] from `samples` draws.
ElboEstimate corrupted_elbo(const GaussianWorld& world, const GaussianEncoder& encoder, const AffineDecoder& decoder,
                            double beta, int64_t samples, uint64_t seed);

/// Δ = E[−log p(X_S)] − E_q[−log p(X_S | Z)] with the marginal model on the
/// same scored set; both terms share each draw of (X, Z).
Estimate delta_estimate(const GaussianWorld& world, const GaussianEncoder& encoder, const AffineDecoder& decoder,
                        int64_t samples, uint64_t seed);

/// Δ in closed form when `decoder` is the exact conditional:
/// ½·log det Σ_SS − ½·log det Cov(X_S | Z).
double analytic_delta(const GaussianWorld& world, const GaussianEncoder& encoder, Scoring scoring);

/// Expected KL cost ½(k·τ² + tr(G Σ_VV Gᵀ) − k − k·log τ²). Requires τ² > 0.
double kl_cost(const GaussianWorld& world, const GaussianEncoder& encoder);

struct CollapseVerdict {
    double delta = 0.0;
    double epsilon = 0.0;
    double beta = 0.0;
    double margin = 0.0;  // Δ − β·ε
    bool collapsed_optimal = false;  // margin ≤ 0
};

CollapseVerdict collapse_condition(double delta, double epsilon, double beta);

struct CurvePoint {
    double fraction = 0.0;
    int hidden = 0;
    Estimate delta;
    double analytic = 0.0;
};

/// For each fraction f the first ⌊f·d⌋ coordinates are hidden, the encoder is
/// the identity channel with noise τ² and the decoder is the exact conditional.
std::vector<CurvePoint> delta_vs_mask_curve(const Eigen::MatrixXd& sigma, const std::vector<double>& fractions,
                                            int64_t samples, uint64_t seed, Scoring scoring, double tau2);

std::string curve_csv(const std::vector<CurvePoint>& curve);

struct KlArm {
    MaskingMode mode = MaskingMode::none;
    RunLog log;
    LatentStatistics final_stats;  // on the clean corpus after the last step
};

/// Trains one tokenizer per masking mode (none, latent, image) from the same
/// seed, corpus and budget.
std::vector<KlArm> kl_dynamics_compare(const TrainConfig& cfg, const Dataset& data);

}  // namespace mactok
