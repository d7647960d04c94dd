#pragma once

// Independent reference computations used only by the tests. Everything here is
// dense and direct, deliberately sharing no code path with the fast routines
// under test beyond kernel evaluation.

#include <cmath>
#include <random>

#include <Eigen/Dense>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// log N(x; mean, cov) via a fresh Cholesky factorization.
inline double mvn_logpdf(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
  Eigen::LLT<MatrixXd> llt(cov);
  const VectorXd w = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (logdet + w.squaredNorm() + static_cast<double>(x.size()) * kLog2Pi);
}

/// Naive O(n²) DFT.
inline std::vector<std::complex<double>> naive_dft(const VectorXd& x) {
  const auto n = x.size();
  std::vector<std::complex<double>> out(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double ang = -2.0 * M_PI * static_cast<double>(j * k) / static_cast<double>(n);
      acc += x[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

/// Dense feature-major covariance K^Y ⊗ K^T + D ⊗ I built entry by entry.
template <class Kernel>
MatrixXd segment_covariance(const Kernel& k, Eigen::Index n, const MatrixXd& task, const VectorXd& noise) {
  const Eigen::Index p = task.rows();
  MatrixXd cov(n * p, n * p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b)
      for (Eigen::Index s = 0; s < n; ++s)
        for (Eigen::Index t = 0; t < n; ++t)
          cov(a * n + s, b * n + t) =
              task(a, b) * k(static_cast<double>(s - t)) + (a == b && s == t ? noise[a] : 0.0);
  return cov;
}

/// Column-stacks a time×feature matrix into the feature-major vector.
inline VectorXd feature_major(const MatrixXd& m) {
  return Eigen::Map<const VectorXd>(m.data(), m.size());
}

inline MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index p, double ridge = 0.5) {
  std::normal_distribution<double> normal;
  MatrixXd a = MatrixXd::NullaryExpr(p, p, [&] { return normal(rng); });
  return a * a.transpose() + ridge * MatrixXd::Identity(p, p);
}

/// Draws a feature-major sample from N(0, cov) and reshapes it to time×feature.
inline MatrixXd sample_segment(std::mt19937_64& rng, const MatrixXd& cov, Eigen::Index n, Eigen::Index p) {
  std::normal_distribution<double> normal;
  const VectorXd z = VectorXd::NullaryExpr(n * p, [&] { return normal(rng); });
  const VectorXd x = Eigen::LLT<MatrixXd>(cov).matrixL() * z;
  return Eigen::Map<const MatrixXd>(x.data(), n, p);
}

}  // namespace oracle
