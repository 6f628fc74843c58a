#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mactok/features.hpp"
#include "mactok/image.hpp"

namespace mactok {

/// 10·log10(255² / MSE) on the 8-bit scale; identical images give +inf.
double psnr(const RgbImage& a, const RgbImage& b);

/// "inf" for the identical-image sentinel, shortest round-trip otherwise.
std::string format_metric(double value);

/// Luma with weights (0.299, 0.587, 0.114), row-major [H·W].
std::vector<double> to_gray(const RgbImage& image);

/// Mean local SSIM over the valid region of an 11×11 Gaussian window
/// (σ = 1.5) on luma, C1 = (0.01·255)², C2 = (0.03·255)².
double ssim(const RgbImage& a, const RgbImage& b);
double ssim_gray(const std::vector<double>& a, const std::vector<double>& b, int64_t height, int64_t width);

struct ProbeOptions {
    double validation_fraction = 0.3;
    double l2 = 1e-3;
    int64_t max_iterations = 2000;
    double tolerance = 1e-7;
    uint64_t seed = 0;
};

struct ProbeResult {
    double accuracy = 0.0;
    double train_accuracy = 0.0;
    int64_t classes = 0;
    int64_t train_size = 0;
    int64_t validation_size = 0;
    int64_t iterations = 0;  // objective evaluations
    std::string representation = "pooled_mu";
};

/// Multinomial logistic regression on standardized features, fitted with
/// L-BFGS. The split is a seeded permutation. Throws InvalidInputError when
/// the training split holds fewer than two classes.
ProbeResult linear_probe(const Eigen::MatrixXd& features, const std::vector<int64_t>& labels,
                         const ProbeOptions& options = {});

struct Projection {
    Eigen::MatrixXd coords;      // [M, 2]
    Eigen::MatrixXd components;  // [D, 2], unit columns
    Eigen::Vector2d explained;   // variance along each component
};

/// Top-2 principal components of the centred rows. Each component's first
/// nonzero loading is made positive.
Projection pca_2d(const Eigen::MatrixXd& data);

/// Fréchet distance between Gaussian fits of two feature sets (rows are samples).
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Fréchet distance of global feature vectors of two image directories.
/// Returns nullopt ("n/a") when no provider is configured.
std::optional<double> rfid_hook(const std::filesystem::path& real_dir, const std::filesystem::path& recon_dir,
                                FeatureProvider* provider);

}  // namespace mactok
