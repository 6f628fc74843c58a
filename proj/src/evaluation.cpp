#include "mactok/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <torch/torch.h>

#include "mactok/error.hpp"
#include "mactok/masking.hpp"

namespace mactok {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void check_same_shape(const RgbImage& a, const RgbImage& b) {
    if (a.width != b.width || a.height != b.height) throw ShapeError("images differ in size");
}

}  // namespace

double psnr(const RgbImage& a, const RgbImage& b) {
    check_same_shape(a, b);
    if (a.data.empty()) throw ShapeError("empty image");
    double se = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    const double mse = se / static_cast<double>(a.data.size());
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

std::string format_metric(double value) {
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    return fmt::format("{}", value);
}

std::vector<double> to_gray(const RgbImage& image) {
    std::vector<double> out(static_cast<size_t>(image.width * image.height));
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = 0.299 * image.data[3 * i] + 0.587 * image.data[3 * i + 1] + 0.114 * image.data[3 * i + 2];
    }
    return out;
}

double ssim(const RgbImage& a, const RgbImage& b) {
    check_same_shape(a, b);
    return ssim_gray(to_gray(a), to_gray(b), a.height, a.width);
}

double ssim_gray(const std::vector<double>& a, const std::vector<double>& b, int64_t height, int64_t width) {
    constexpr int k = 11;
    constexpr double sigma = 1.5;
    if (height < k || width < k) throw ShapeError("SSIM needs images of at least 11x11 pixels");
    if (a.size() != b.size() || static_cast<int64_t>(a.size()) != height * width) throw ShapeError("size mismatch");
    const double c1 = std::pow(0.01 * 255.0, 2), c2 = std::pow(0.03 * 255.0, 2);

    std::array<double, k * k> w{};
    double wsum = 0.0;
    for (int y = 0; y < k; ++y) {
        for (int x = 0; x < k; ++x) {
            const double dy = y - k / 2, dx = x - k / 2;
            w[y * k + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            wsum += w[y * k + x];
        }
    }
    for (auto& v : w) v /= wsum;

    double total = 0.0;
    int64_t count = 0;
    for (int64_t y0 = 0; y0 + k <= height; ++y0) {
        for (int64_t x0 = 0; x0 + k <= width; ++x0) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int y = 0; y < k; ++y) {
                for (int x = 0; x < k; ++x) {
                    const auto i = static_cast<size_t>((y0 + y) * width + x0 + x);
                    const double wi = w[y * k + x];
                    ma += wi * a[i];
                    mb += wi * b[i];
                    saa += wi * a[i] * a[i];
                    sbb += wi * b[i] * b[i];
                    sab += wi * a[i] * b[i];
                }
            }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

namespace {

double accuracy(const MatrixXd& x, const std::vector<int64_t>& y, const MatrixXd& w, const VectorXd& b) {
    if (x.rows() == 0) return 0.0;
    MatrixXd logits = (x * w).rowwise() + b.transpose();
    int64_t correct = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        correct += arg == y[static_cast<size_t>(i)];
    }
    return static_cast<double>(correct) / static_cast<double>(x.rows());
}

}  // namespace

ProbeResult linear_probe(const MatrixXd& features, const std::vector<int64_t>& labels, const ProbeOptions& opt) {
    const auto m = features.rows();
    if (static_cast<size_t>(m) != labels.size()) throw ShapeError("one label per feature row required");
    if (!(opt.validation_fraction > 0.0 && opt.validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must lie in (0, 1)");
    }
    if (!features.allFinite()) throw InvalidInputError("probe features must be finite");

    std::vector<int64_t> order(static_cast<size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(opt.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<int64_t>(std::floor(opt.validation_fraction * static_cast<double>(m)));
    const auto n_train = m - n_val;

    // Dense class ids from the training split.
    std::vector<int64_t> classes;
    for (int64_t i = 0; i < n_train; ++i) classes.push_back(labels[static_cast<size_t>(order[static_cast<size_t>(i)])]);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    if (classes.size() < 2) throw InvalidInputError("degenerate single-class training split");
    const auto c = static_cast<Eigen::Index>(classes.size());
    auto class_of = [&](int64_t label) -> int64_t {
        auto it = std::lower_bound(classes.begin(), classes.end(), label);
        return it != classes.end() && *it == label ? it - classes.begin() : -1;
    };

    MatrixXd xt(n_train, features.cols()), xv(n_val, features.cols());
    std::vector<int64_t> yt, yv;
    for (int64_t i = 0; i < m; ++i) {
        const auto src = order[static_cast<size_t>(i)];
        if (i < n_train) {
            xt.row(i) = features.row(src);
            yt.push_back(class_of(labels[static_cast<size_t>(src)]));
        } else {
            xv.row(i - n_train) = features.row(src);
            yv.push_back(class_of(labels[static_cast<size_t>(src)]));
        }
    }

    const VectorXd mean = xt.colwise().mean();
    VectorXd scale = ((xt.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt();
    for (auto& s : scale) s = s > 1e-12 ? s : 1.0;
    auto standardize = [&](MatrixXd& x) {
        x = (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    };
    standardize(xt);
    standardize(xv);

    // Mean cross-entropy + ½·l2·‖W‖², minimized with L-BFGS (strong-Wolfe line search).
    const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
    auto x = torch::from_blob(xt.data(), {n_train, xt.cols()}, {1, n_train}, f64).clone();
    auto y = torch::tensor(yt, torch::kInt64);
    auto wt = torch::zeros({xt.cols(), c}, f64).requires_grad_(true);
    auto bt = torch::zeros({c}, f64).requires_grad_(true);
    torch::optim::LBFGS solver({wt, bt}, torch::optim::LBFGSOptions(1.0)
                                             .max_iter(opt.max_iterations)
                                             .tolerance_grad(opt.tolerance)
                                             .tolerance_change(1e-12)
                                             .history_size(20)
                                             .line_search_fn("strong_wolfe"));
    ProbeResult r;
    solver.step([&] {
        solver.zero_grad();
        auto loss = torch::nn::functional::cross_entropy(torch::addmm(bt, x, wt), y) + 0.5 * opt.l2 * wt.pow(2).sum();
        loss.backward();
        ++r.iterations;
        return loss;
    });
    const auto wd = wt.detach().contiguous();
    const auto bd = bt.detach().contiguous();
    MatrixXd w = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        wd.data_ptr<double>(), xt.cols(), c);
    VectorXd b = Eigen::Map<const VectorXd>(bd.data_ptr<double>(), c);

    // Validation labels unseen in training can never be predicted correctly.
    int64_t correct = 0;
    if (n_val > 0) {
        MatrixXd logits = (xv * w).rowwise() + b.transpose();
        for (int64_t i = 0; i < n_val; ++i) {
            Eigen::Index arg = 0;
            logits.row(i).maxCoeff(&arg);
            correct += arg == yv[static_cast<size_t>(i)];
        }
    }
    r.accuracy = n_val > 0 ? static_cast<double>(correct) / static_cast<double>(n_val) : 0.0;
    r.train_accuracy = accuracy(xt, yt, w, b);
    r.classes = c;
    r.train_size = n_train;
    r.validation_size = n_val;
    return r;
}

Projection pca_2d(const MatrixXd& data) {
    if (data.rows() == 0 || data.cols() == 0) throw ShapeError("PCA needs a non-empty matrix");
    if (!data.allFinite()) throw InvalidInputError("PCA input must be finite");
    const MatrixXd centred = data.rowwise() - data.colwise().mean();
    const MatrixXd cov = centred.transpose() * centred / static_cast<double>(std::max<Eigen::Index>(data.rows() - 1, 1));
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    Projection p;
    p.components = MatrixXd::Zero(data.cols(), 2);
    p.explained = Eigen::Vector2d::Zero();
    const auto d = data.cols();
    for (Eigen::Index j = 0; j < std::min<Eigen::Index>(2, d); ++j) {
        VectorXd v = eig.eigenvectors().col(d - 1 - j);
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (std::abs(v(i)) > 1e-12) {
                if (v(i) < 0) v = -v;
                break;
            }
        }
        p.components.col(j) = v;
        p.explained(j) = std::max(0.0, eig.eigenvalues()(d - 1 - j));
    }
    p.coords = centred * p.components;
    return p;
}

namespace {

MatrixXd sqrt_psd(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (m + m.transpose()));
    VectorXd ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

void moments(const MatrixXd& x, VectorXd& mu, MatrixXd& cov) {
    mu = x.colwise().mean().transpose();
    const MatrixXd c = x.rowwise() - mu.transpose();
    cov = x.rows() > 1 ? MatrixXd(c.transpose() * c / static_cast<double>(x.rows() - 1))
                       : MatrixXd::Zero(x.cols(), x.cols());
}

}  // namespace

double frechet_distance(const MatrixXd& a, const MatrixXd& b) {
    if (a.rows() == 0 || b.rows() == 0 || a.cols() != b.cols()) throw ShapeError("feature sets must share a width");
    VectorXd ma, mb;
    MatrixXd sa, sb;
    moments(a, ma, sa);
    moments(b, mb, sb);
    const MatrixXd ra = sqrt_psd(sa);
    const double cross = sqrt_psd(ra * sb * ra).trace();
    return std::max(0.0, (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross);
}

namespace {

MatrixXd directory_features(const std::filesystem::path& dir, FeatureProvider& provider) {
    std::vector<RgbImage> images;
    for (const auto& path : list_images(dir)) images.push_back(read_image(path));
    if (images.empty()) throw IoError("no images in " + dir.string());
    torch::NoGradGuard no_grad;
    auto cls = provider.extract(to_batch(images)).cls.to(torch::kFloat64).contiguous();
    MatrixXd out(cls.size(0), cls.size(1));
    auto acc = cls.accessor<double, 2>();
    for (int64_t i = 0; i < cls.size(0); ++i) {
        for (int64_t j = 0; j < cls.size(1); ++j) out(i, j) = acc[i][j];
    }
    return out;
}

}  // namespace

std::optional<double> rfid_hook(const std::filesystem::path& real_dir, const std::filesystem::path& recon_dir,
                                FeatureProvider* provider) {
    if (provider == nullptr) return std::nullopt;
    try {
        return frechet_distance(directory_features(real_dir, *provider), directory_features(recon_dir, *provider));
    } catch (const BackboneUnavailableError&) {
        return std::nullopt;
    }
}

}  // namespace mactok
