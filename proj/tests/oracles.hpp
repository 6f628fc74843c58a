#pragma once

// Independent reference computations. None of these call into the library
// code they are used to check.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mactok::oracle {

/// Block means over consecutive groups of r tokens of a row-major
/// [batch, tokens, width] array. Long-double accumulation keeps the sum of up
/// to 2^11 equal doubles exact, so constant blocks average back exactly.
inline std::vector<double> block_mean(const std::vector<double>& v, int64_t batch, int64_t tokens, int64_t width,
                                      int64_t r) {
    const int64_t groups = tokens / r;
    std::vector<double> out(static_cast<size_t>(batch * groups * width));
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t g = 0; g < groups; ++g)
            for (int64_t c = 0; c < width; ++c) {
                long double sum = 0;
                for (int64_t k = 0; k < r; ++k) sum += v[static_cast<size_t>((b * tokens + g * r + k) * width + c)];
                out[static_cast<size_t>((b * groups + g) * width + c)] = static_cast<double>(sum / r);
            }
    return out;
}

/// KL(N(mu, var) ‖ N(0, 1)) by composite Simpson quadrature of q·log(q/p).
inline double kl_quadrature(double mu, double var) {
    const double sd = std::sqrt(var);
    const double lo = mu - 14 * sd, hi = mu + 14 * sd;
    const int n = 40000;
    const double h = (hi - lo) / n;
    auto f = [&](double x) {
        const double log_q = -0.5 * std::log(2 * std::numbers::pi * var) - (x - mu) * (x - mu) / (2 * var);
        const double log_p = -0.5 * std::log(2 * std::numbers::pi) - x * x / 2;
        return std::exp(log_q) * (log_q - log_p);
    };
    double s = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) s += f(lo + i * h) * (i % 2 ? 4 : 2);
    return s * h / 3;
}

/// ⌊m·n⌋ evaluated in extended precision, exact for n < 2¹⁰.
inline int64_t floor_product(double m, int64_t n) {
    return static_cast<int64_t>(std::floor(static_cast<long double>(m) * static_cast<long double>(n)));
}

/// Indices of the k largest scores after a full sort by (score desc, index asc),
/// returned in ascending index order.
inline std::vector<int64_t> topk_bruteforce(const std::vector<double>& scores, int64_t k) {
    std::vector<std::pair<double, int64_t>> v;
    for (size_t i = 0; i < scores.size(); ++i) v.emplace_back(scores[i], static_cast<int64_t>(i));
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::vector<int64_t> out;
    for (int64_t i = 0; i < k; ++i) out.push_back(v[static_cast<size_t>(i)].second);
    std::sort(out.begin(), out.end());
    return out;
}

/// Central differences of a scalar function of a flat parameter vector.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double h = 1e-6) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0, den = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += std::max(a[i] * a[i], b[i] * b[i]);
    }
    return den == 0 ? std::sqrt(num) : std::sqrt(num / den);
}

/// SSIM with a separable 1D Gaussian window, valid region, on luma arrays.
inline double ssim_separable(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
    const int k = 11;
    std::vector<double> g(k);
    double s = 0;
    for (int i = 0; i < k; ++i) s += g[i] = std::exp(-std::pow(i - 5, 2) / (2 * 1.5 * 1.5));
    for (auto& v : g) v /= s;
    const int oh = h - k + 1, ow = w - k + 1;
    auto filter = [&](const std::vector<double>& img) {
        std::vector<double> rows(static_cast<size_t>(h * ow)), out(static_cast<size_t>(oh * ow));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0;
                for (int i = 0; i < k; ++i) acc += g[i] * img[y * w + x + i];
                rows[y * ow + x] = acc;
            }
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0;
                for (int i = 0; i < k; ++i) acc += g[i] * rows[(y + i) * ow + x];
                out[y * ow + x] = acc;
            }
        return out;
    };
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (size_t i = 0; i < a.size(); ++i) aa[i] = a[i] * a[i], bb[i] = b[i] * b[i], ab[i] = a[i] * b[i];
    const auto ma = filter(a), mb = filter(b), saa = filter(aa), sbb = filter(bb), sab = filter(ab);
    const double c1 = 6.5025, c2 = 58.5225;
    double total = 0;
    for (size_t i = 0; i < ma.size(); ++i) {
        const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cv = sab[i] - ma[i] * mb[i];
        total += (2 * ma[i] * mb[i] + c1) * (2 * cv + c2) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(ma.size());
}

/// I(X_S; Z) for jointly Gaussian (X_S, Z) from the joint covariance determinant:
/// ½·log(det Σ_SS · det Σ_ZZ / det Σ_joint).
inline double gaussian_mutual_information(const Eigen::MatrixXd& joint, int s) {
    const int z = static_cast<int>(joint.rows()) - s;
    if (s == 0 || z == 0) return 0.0;
    const double d_s = joint.topLeftCorner(s, s).determinant();
    const double d_z = joint.bottomRightCorner(z, z).determinant();
    return 0.5 * std::log(d_s * d_z / joint.determinant());
}

/// Joint covariance of (X_S, Z) for Z = G·X_V + τ·E, assembled explicitly.
inline Eigen::MatrixXd channel_joint(const Eigen::MatrixXd& sigma, const std::vector<int>& scored,
                                     const std::vector<int>& visible, const Eigen::MatrixXd& gain, double tau2) {
    const int d = static_cast<int>(sigma.rows()), k = static_cast<int>(gain.rows());
    // Linear map from (X, E) to (X_S, Z).
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<int>(scored.size()) + k, d + k);
    for (size_t i = 0; i < scored.size(); ++i) a(static_cast<int>(i), scored[i]) = 1.0;
    for (int r = 0; r < k; ++r) {
        for (size_t j = 0; j < visible.size(); ++j) a(static_cast<int>(scored.size()) + r, visible[j]) = gain(r, j);
        a(static_cast<int>(scored.size()) + r, d + r) = std::sqrt(tau2);
    }
    Eigen::MatrixXd src = Eigen::MatrixXd::Zero(d + k, d + k);
    src.topLeftCorner(d, d) = sigma;
    src.bottomRightCorner(k, k).setIdentity();
    return a * src * a.transpose();
}

/// Differential entropy of N(·, cov) in nats.
inline double gaussian_entropy(const Eigen::MatrixXd& cov) {
    const double n = static_cast<double>(cov.rows());
    return 0.5 * (n * std::log(2 * std::numbers::pi * std::numbers::e) + std::log(cov.determinant()));
}

}  // namespace mactok::oracle
