#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgpmon/error.hpp"

namespace sgpmon {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using MaskVector = Eigen::Matrix<bool, Eigen::Dynamic, 1>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double log_sum_exp(std::span<const double> values) {
  double m = kNegInf;
  for (double v : values) m = std::max(m, v);
  if (m == kNegInf) return kNegInf;
  if (m == std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

inline double log_sum_exp(const std::vector<double>& values) {
  return log_sum_exp(std::span<const double>(values));
}

/// Cholesky factor of a symmetric matrix; throws NonPositiveDefinite naming
/// `context` when the factorization fails.
inline Eigen::LLT<MatrixXd> checked_llt(const MatrixXd& a, const std::string& context) {
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    fail(ErrorKind::NonPositiveDefinite, "covariance is not positive definite: " + context);
  }
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) {
      fail(ErrorKind::NonPositiveDefinite, "covariance is not positive definite: " + context);
    }
  }
  return llt;
}

inline double llt_logdet(const Eigen::LLT<MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// log N(x; 0, cov) from a factorization of cov.
inline double gaussian_logpdf_centered(const Eigen::LLT<MatrixXd>& llt, const VectorXd& centered) {
  const VectorXd w = llt.matrixL().solve(centered);
  return -0.5 * (llt_logdet(llt) + w.squaredNorm() +
                 static_cast<double>(centered.size()) * kLog2Pi);
}

}  // namespace sgpmon
