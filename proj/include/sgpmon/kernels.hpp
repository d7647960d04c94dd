#pragma once

#include <cmath>
#include <cstdlib>
#include <string>

#include "sgpmon/numeric.hpp"

namespace sgpmon {

/// Half-integer Matérn orders with closed forms.
enum class Smoothness { Half, ThreeHalves, FiveHalves };

inline double smoothness_value(Smoothness nu) {
  switch (nu) {
    case Smoothness::Half: return 0.5;
    case Smoothness::ThreeHalves: return 1.5;
    case Smoothness::FiveHalves: return 2.5;
  }
  return 1.5;
}

inline Smoothness smoothness_from_value(double nu) {
  if (nu == 0.5) return Smoothness::Half;
  if (nu == 1.5) return Smoothness::ThreeHalves;
  if (nu == 2.5) return Smoothness::FiveHalves;
  fail(ErrorKind::InvalidInput, "Matern smoothness must be 0.5, 1.5 or 2.5, got " + std::to_string(nu));
}

/// Relative diagonal jitter applied to temporal Gram matrices before factorization.
inline constexpr double kGramJitter = 1e-8;

/// Stationary Matérn covariance on the time axis, in units of time steps.
class MaternKernel {
 public:
  MaternKernel(double variance, double lengthscale, Smoothness nu = Smoothness::ThreeHalves)
      : variance_(variance), lengthscale_(lengthscale), nu_(nu) {
    if (!(variance > 0.0) || !std::isfinite(variance)) {
      fail(ErrorKind::InvalidInput, "Matern variance must be positive and finite");
    }
    if (!(lengthscale > 0.0) || !std::isfinite(lengthscale)) {
      fail(ErrorKind::InvalidInput, "Matern lengthscale must be positive and finite");
    }
  }

  [[nodiscard]] double variance() const { return variance_; }
  [[nodiscard]] double lengthscale() const { return lengthscale_; }
  [[nodiscard]] Smoothness smoothness() const { return nu_; }

  /// k(lag); even in lag, equal to the variance at zero.
  [[nodiscard]] double operator()(double lag) const {
    const double r = std::abs(lag) / lengthscale_;
    switch (nu_) {
      case Smoothness::Half:
        return variance_ * std::exp(-r);
      case Smoothness::ThreeHalves: {
        const double a = std::sqrt(3.0) * r;
        return variance_ * (1.0 + a) * std::exp(-a);
      }
      case Smoothness::FiveHalves: {
        const double a = std::sqrt(5.0) * r;
        return variance_ * (1.0 + a + a * a / 3.0) * std::exp(-a);
      }
    }
    return 0.0;
  }

  /// d k(lag) / d log(lengthscale).
  [[nodiscard]] double dlog_lengthscale(double lag) const {
    const double r = std::abs(lag) / lengthscale_;
    switch (nu_) {
      case Smoothness::Half:
        return variance_ * r * std::exp(-r);
      case Smoothness::ThreeHalves: {
        const double a = std::sqrt(3.0) * r;
        return variance_ * a * a * std::exp(-a);
      }
      case Smoothness::FiveHalves: {
        const double a = std::sqrt(5.0) * r;
        return variance_ * (a * a / 3.0) * (1.0 + a) * std::exp(-a);
      }
    }
    return 0.0;
  }

 private:
  double variance_;
  double lengthscale_;
  Smoothness nu_;
};

inline double matern_eval(const MaternKernel& kernel, double lag) { return kernel(lag); }

/// Free-form inter-feature covariance K^Y = L Lᵀ held by its Cholesky factor.
class TaskCovariance {
 public:
  explicit TaskCovariance(MatrixXd cholesky_factor) : factor_(std::move(cholesky_factor)) {
    if (factor_.rows() != factor_.cols() || factor_.rows() == 0) {
      fail(ErrorKind::InvalidInput, "task Cholesky factor must be square and non-empty");
    }
    for (Eigen::Index i = 0; i < factor_.rows(); ++i) {
      if (!(factor_(i, i) > 0.0)) {
        fail(ErrorKind::InvalidInput, "task Cholesky factor needs a strictly positive diagonal");
      }
      for (Eigen::Index j = i + 1; j < factor_.cols(); ++j) {
        if (factor_(i, j) != 0.0) {
          fail(ErrorKind::InvalidInput, "task Cholesky factor must be lower triangular");
        }
      }
    }
  }

  static TaskCovariance identity(Eigen::Index p) { return TaskCovariance(MatrixXd::Identity(p, p)); }

  /// Factorizes an SPD matrix into the canonical (positive-diagonal) factor.
  static TaskCovariance from_matrix(const MatrixXd& k) {
    const auto llt = checked_llt(k, "task covariance");
    return TaskCovariance(llt.matrixL());
  }

  [[nodiscard]] const MatrixXd& cholesky_factor() const { return factor_; }
  [[nodiscard]] Eigen::Index size() const { return factor_.rows(); }
  [[nodiscard]] MatrixXd matrix() const { return factor_ * factor_.transpose(); }

 private:
  MatrixXd factor_;
};

inline MatrixXd task_cov_assemble(const TaskCovariance& tc) { return tc.matrix(); }

/// Independent per-feature observation noise, D = diag(σ_p²).
class NoiseModel {
 public:
  explicit NoiseModel(VectorXd per_feature_variance) : variance_(std::move(per_feature_variance)) {
    if (variance_.size() == 0) fail(ErrorKind::InvalidInput, "noise model needs at least one feature");
    for (Eigen::Index p = 0; p < variance_.size(); ++p) {
      if (!(variance_[p] > 0.0) || !std::isfinite(variance_[p])) {
        fail(ErrorKind::InvalidInput, "noise variances must be positive and finite");
      }
    }
  }

  [[nodiscard]] const VectorXd& variances() const { return variance_; }
  [[nodiscard]] Eigen::Index size() const { return variance_.size(); }

 private:
  VectorXd variance_;
};

/// Temporal covariance at lags 0..num_steps (first column of the Gram matrix).
inline VectorXd autocovariance(const MaternKernel& kernel, Eigen::Index num_steps) {
  VectorXd c(num_steps + 1);
  for (Eigen::Index k = 0; k <= num_steps; ++k) c[k] = kernel(static_cast<double>(k));
  return c;
}

/// Symmetric Toeplitz Gram matrix on the uniform grid 0..num_steps.
inline MatrixXd gram_matrix(const MaternKernel& kernel, Eigen::Index num_steps) {
  if (num_steps < 0) fail(ErrorKind::InvalidInput, "gram_matrix needs num_steps >= 0");
  const VectorXd c = autocovariance(kernel, num_steps);
  const Eigen::Index n = num_steps + 1;
  MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = c[std::abs(i - j)];
  }
  return g;
}

/// Gram matrix between two arbitrary sets of grid times.
inline MatrixXd cross_gram(const MaternKernel& kernel, const VectorXd& a, const VectorXd& b) {
  MatrixXd g(a.size(), b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    for (Eigen::Index j = 0; j < b.size(); ++j) g(i, j) = kernel(a[i] - b[j]);
  }
  return g;
}

inline void add_gram_jitter(MatrixXd& gram, double variance) {
  gram.diagonal().array() += kGramJitter * variance;
}

/// Standard Kronecker product: block (i,j) of the result is outer(i,j)·inner.
inline MatrixXd kron_cov(const MatrixXd& outer, const MatrixXd& inner) {
  MatrixXd out(outer.rows() * inner.rows(), outer.cols() * inner.cols());
  for (Eigen::Index i = 0; i < outer.rows(); ++i) {
    for (Eigen::Index j = 0; j < outer.cols(); ++j) {
      out.block(i * inner.rows(), j * inner.cols(), inner.rows(), inner.cols()) = outer(i, j) * inner;
    }
  }
  return out;
}

/// Feature-major segment covariance K^Y ⊗ K^T + D ⊗ I, matching the observation
/// layout z = [z_1^1 … z_N^1, z_1^2 … z_N^P] (index = feature·N + time).
inline MatrixXd emission_covariance(const MatrixXd& temporal, const MatrixXd& task, const VectorXd& noise) {
  MatrixXd cov = kron_cov(task, temporal);
  const Eigen::Index n = temporal.rows();
  for (Eigen::Index p = 0; p < noise.size(); ++p) {
    cov.diagonal().segment(p * n, n).array() += noise[p];
  }
  return cov;
}

}  // namespace sgpmon
