#include "mactok/collapse_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "mactok/error.hpp"

namespace mactok {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(Scoring s) { return s == Scoring::full ? "full" : "masked_only"; }

Scoring scoring_from_string(const std::string& s) {
    if (s == "full") return Scoring::full;
    if (s == "masked_only") return Scoring::masked_only;
    throw ConfigError("scoring must be masked_only or full, got '" + s + "'");
}

std::vector<int> GaussianWorld::visible() const {
    std::vector<int> out;
    for (int i = 0; i < dim(); ++i) {
        if (!std::binary_search(hidden.begin(), hidden.end(), i)) out.push_back(i);
    }
    return out;
}

void GaussianWorld::validate() const {
    if (sigma.rows() == 0 || sigma.rows() != sigma.cols()) throw InvalidInputError("Σ must be a non-empty square matrix");
    if (!sigma.isApprox(sigma.transpose(), 1e-12)) throw InvalidInputError("Σ must be symmetric");
    Eigen::LLT<MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) throw InvalidInputError("Σ is singular or not positive definite");
    if (!std::is_sorted(hidden.begin(), hidden.end()) ||
        std::adjacent_find(hidden.begin(), hidden.end()) != hidden.end()) {
        throw InvalidInputError("hidden coordinates must be sorted and unique");
    }
    for (int h : hidden) {
        if (h < 0 || h >= dim()) throw InvalidInputError("hidden coordinate out of range");
    }
}

GaussianWorld GaussianWorld::equicorrelated(int dim, double rho, std::vector<int> hidden) {
    MatrixXd s = MatrixXd::Constant(dim, dim, rho);
    s.diagonal().setOnes();
    GaussianWorld w{s, std::move(hidden)};
    w.validate();
    return w;
}

GaussianEncoder GaussianEncoder::identity(const GaussianWorld& world, double tau2) {
    const auto k = static_cast<int>(world.visible().size());
    return {MatrixXd::Identity(k, k), tau2, false};
}

GaussianEncoder GaussianEncoder::prior(int latent_dim) { return {MatrixXd::Zero(latent_dim, 0), 1.0, true}; }

namespace {

MatrixXd take(const MatrixXd& m, const std::vector<int>& rows, const std::vector<int>& cols) {
    MatrixXd out(rows.size(), cols.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        for (size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
    }
    return out;
}

VectorXd take(const VectorXd& v, const std::vector<int>& idx) {
    VectorXd out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
    return out;
}

void check_encoder(const GaussianWorld& world, const GaussianEncoder& enc) {
    if (enc.collapsed) return;
    if (enc.gain.cols() != static_cast<Eigen::Index>(world.visible().size())) {
        throw ShapeError("encoder gain must have one column per visible coordinate");
    }
    if (!(enc.tau2 >= 0.0)) throw InvalidInputError("τ² must be nonnegative");
}

// Joint moments of (X_S, Z).
struct ChannelMoments {
    MatrixXd cov_z;
    MatrixXd cross;  // Cov(X_S, Z)
};

ChannelMoments channel_moments(const GaussianWorld& world, const GaussianEncoder& enc, const std::vector<int>& scored) {
    const auto k = enc.latent_dim();
    if (enc.collapsed) return {MatrixXd::Identity(k, k), MatrixXd::Zero(scored.size(), k)};
    const auto vis = world.visible();
    const MatrixXd s_vv = take(world.sigma, vis, vis);
    MatrixXd cov_z = enc.gain * s_vv * enc.gain.transpose();
    cov_z.diagonal().array() += enc.tau2;
    return {cov_z, take(world.sigma, scored, vis) * enc.gain.transpose()};
}

// −log N(x; mean, cov) with a precomputed factorization.
class GaussianNll {
public:
    explicit GaussianNll(const MatrixXd& cov) : llt_(cov) {
        if (cov.rows() > 0 && llt_.info() != Eigen::Success) {
            throw InvalidInputError("decoder covariance is singular");
        }
        const MatrixXd l = llt_.matrixL();
        const double log_det = 2.0 * l.diagonal().array().log().sum();
        constant_ = 0.5 * (static_cast<double>(cov.rows()) * std::log(2.0 * std::numbers::pi) + log_det);
        dim_ = cov.rows();
    }

    double operator()(const VectorXd& residual) const {
        if (dim_ == 0) return 0.0;
        return constant_ + 0.5 * residual.dot(llt_.solve(residual));
    }

private:
    Eigen::LLT<MatrixXd> llt_;
    double constant_ = 0.0;
    Eigen::Index dim_ = 0;
};

double log_det_spd(const MatrixXd& m) {
    if (m.rows() == 0) return 0.0;
    Eigen::LLT<MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw InvalidInputError("covariance is singular");
    const MatrixXd l = llt.matrixL();
    return 2.0 * l.diagonal().array().log().sum();
}

// Draws (X, Z) pairs and hands them to `visit`.
template <typename Visit>
void sample_pairs(const GaussianWorld& world, const GaussianEncoder& enc, int64_t samples, uint64_t seed,
                  Visit&& visit) {
    if (samples < 1) throw InvalidInputError("samples must be at least 1");
    world.validate();
    check_encoder(world, enc);
    const MatrixXd chol = Eigen::LLT<MatrixXd>(world.sigma).matrixL();
    const auto vis = world.visible();
    const auto d = world.dim();
    const auto k = enc.latent_dim();
    const double tau = std::sqrt(enc.tau2);
    Rng rng(seed);
    std::normal_distribution<double> normal;
    VectorXd n(d), e(k), z(k);
    for (int64_t s = 0; s < samples; ++s) {
        for (int i = 0; i < d; ++i) n(i) = normal(rng);
        for (int i = 0; i < k; ++i) e(i) = normal(rng);
        const VectorXd x = chol * n;
        if (enc.collapsed) {
            z = e;
        } else {
            z = enc.gain * take(x, vis) + tau * e;
        }
        visit(x, z);
    }
}

// Welford accumulator.
struct Moments {
    int64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double v) {
        ++n;
        const double d = v - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (v - mean);
    }
    Estimate estimate() const {
        const double var = n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
        return {mean, std::sqrt(var / static_cast<double>(n)), n};
    }
};

void check_decoder(const AffineDecoder& dec, int latent_dim) {
    const auto s = static_cast<Eigen::Index>(dec.scored.size());
    if (dec.weight.rows() != s || dec.weight.cols() != latent_dim || dec.bias.size() != s || dec.cov.rows() != s ||
        dec.cov.cols() != s) {
        throw ShapeError("decoder shapes do not match the scored set and latent width");
    }
}

}  // namespace

std::vector<int> scored_coordinates(const GaussianWorld& world, Scoring scoring) {
    if (scoring == Scoring::masked_only) return world.hidden;
    std::vector<int> all(static_cast<size_t>(world.dim()));
    for (int i = 0; i < world.dim(); ++i) all[static_cast<size_t>(i)] = i;
    return all;
}

AffineDecoder exact_conditional_decoder(const GaussianWorld& world, const GaussianEncoder& encoder, Scoring scoring) {
    world.validate();
    check_encoder(world, encoder);
    const auto scored = scored_coordinates(world, scoring);
    const auto mom = channel_moments(world, encoder, scored);
    Eigen::LLT<MatrixXd> llt(mom.cov_z);
    if (mom.cov_z.rows() > 0 && llt.info() != Eigen::Success) throw InvalidInputError("latent covariance is singular");
    AffineDecoder dec;
    dec.scored = scored;
    dec.weight = mom.cov_z.rows() > 0 ? MatrixXd(llt.solve(mom.cross.transpose()).transpose())
                                       : MatrixXd::Zero(scored.size(), 0);
    dec.bias = VectorXd::Zero(scored.size());
    dec.cov = take(world.sigma, scored, scored) - dec.weight * mom.cross.transpose();
    dec.cov = 0.5 * (dec.cov + dec.cov.transpose());
    return dec;
}

AffineDecoder marginal_decoder(const GaussianWorld& world, Scoring scoring) {
    world.validate();
    const auto scored = scored_coordinates(world, scoring);
    return {scored, MatrixXd::Zero(scored.size(), 0), VectorXd::Zero(scored.size()), take(world.sigma, scored, scored)};
}

ElboEstimate corrupted_elbo(const GaussianWorld& world, const GaussianEncoder& encoder, const AffineDecoder& decoder,
                            double beta, int64_t samples, uint64_t seed) {
    check_decoder(decoder, encoder.latent_dim());
    if (!encoder.collapsed && !(encoder.tau2 > 0.0) && beta != 0.0) {
        throw InvalidInputError("a noiseless encoder has infinite KL; use τ² > 0 or β = 0");
    }
    const GaussianNll nll(decoder.cov);
    const auto k = static_cast<double>(encoder.latent_dim());
    const double kl_const = encoder.collapsed ? 0.0 : 0.5 * (k * encoder.tau2 - k - k * std::log(encoder.tau2));
    Moments total, recon, kl;
    sample_pairs(world, encoder, samples, seed, [&](const VectorXd& x, const VectorXd& z) {
        const double r = nll(take(x, decoder.scored) - decoder.weight * z - decoder.bias);
        double q = 0.0;
        if (!encoder.collapsed && beta != 0.0) {
            const VectorXd mean = encoder.gain * take(x, world.visible());
            q = kl_const + 0.5 * mean.squaredNorm();
        }
        recon.add(r);
        kl.add(q);
        total.add(r + beta * q);
    });
    return {total.estimate(), recon.mean, kl.mean};
}

Estimate delta_estimate(const GaussianWorld& world, const GaussianEncoder& encoder, const AffineDecoder& decoder,
                        int64_t samples, uint64_t seed) {
    check_decoder(decoder, encoder.latent_dim());
    const GaussianNll cond(decoder.cov);
    const GaussianNll marg(take(world.sigma, decoder.scored, decoder.scored));
    Moments gain;
    sample_pairs(world, encoder, samples, seed, [&](const VectorXd& x, const VectorXd& z) {
        const VectorXd xs = take(x, decoder.scored);
        gain.add(marg(xs) - cond(xs - decoder.weight * z - decoder.bias));
    });
    return gain.estimate();
}

double analytic_delta(const GaussianWorld& world, const GaussianEncoder& encoder, Scoring scoring) {
    const auto dec = exact_conditional_decoder(world, encoder, scoring);
    return 0.5 * (log_det_spd(take(world.sigma, dec.scored, dec.scored)) - log_det_spd(dec.cov));
}

double kl_cost(const GaussianWorld& world, const GaussianEncoder& encoder) {
    world.validate();
    check_encoder(world, encoder);
    if (encoder.collapsed) return 0.0;
    if (!(encoder.tau2 > 0.0)) throw InvalidInputError("KL cost needs τ² > 0");
    const auto vis = world.visible();
    const MatrixXd s_vv = take(world.sigma, vis, vis);
    const auto k = static_cast<double>(encoder.latent_dim());
    const double trace = (encoder.gain * s_vv * encoder.gain.transpose()).trace();
    return 0.5 * (k * encoder.tau2 + trace - k - k * std::log(encoder.tau2));
}

CollapseVerdict collapse_condition(double delta, double epsilon, double beta) {
    if (!(epsilon > 0.0)) throw InvalidInputError("kl cost must be positive");
    CollapseVerdict v{delta, epsilon, beta, delta - beta * epsilon, false};
    v.collapsed_optimal = v.margin <= 0.0;
    return v;
}

std::vector<CurvePoint> delta_vs_mask_curve(const MatrixXd& sigma, const std::vector<double>& fractions,
                                            int64_t samples, uint64_t seed, Scoring scoring, double tau2) {
    if (!std::is_sorted(fractions.begin(), fractions.end())) throw InvalidInputError("fractions must be ascending");
    std::vector<CurvePoint> curve;
    for (size_t i = 0; i < fractions.size(); ++i) {
        const auto f = fractions[i];
        const auto h = static_cast<int>(masked_count(sigma.rows(), f));
        std::vector<int> hidden(static_cast<size_t>(h));
        for (int j = 0; j < h; ++j) hidden[static_cast<size_t>(j)] = j;
        GaussianWorld world{sigma, hidden};
        world.validate();
        const auto enc = GaussianEncoder::identity(world, tau2);
        const auto dec = exact_conditional_decoder(world, enc, scoring);
        curve.push_back({f, h, delta_estimate(world, enc, dec, samples, seed + i), analytic_delta(world, enc, scoring)});
    }
    return curve;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
    std::string out = "fraction,hidden,delta,std_error,samples,analytic\n";
    for (const auto& p : curve) {
        out += fmt::format("{},{},{},{},{},{}\n", p.fraction, p.hidden, p.delta.value, p.delta.std_error,
                           p.delta.samples, p.analytic);
    }
    return out;
}

std::vector<KlArm> kl_dynamics_compare(const TrainConfig& cfg, const Dataset& data) {
    std::vector<KlArm> arms;
    for (auto mode : {MaskingMode::none, MaskingMode::latent, MaskingMode::image}) {
        auto c = cfg;
        c.masking = mode;
        Trainer trainer(c);
        KlArm arm;
        arm.mode = mode;
        arm.log = trainer.fit(data);
        arm.final_stats = latent_statistics(trainer.model(), data);
        arms.push_back(std::move(arm));
    }
    return arms;
}

}  // namespace mactok
