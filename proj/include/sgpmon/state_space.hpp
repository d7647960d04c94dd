#pragma once

#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

#include "sgpmon/kernels.hpp"
#include "sgpmon/numeric.hpp"

namespace sgpmon {

/// Unit-step discretization of the stochastic differential equation whose
/// stationary autocovariance is a half-integer Matérn kernel:
/// x_{t+1} = A x_t + w, w ~ N(0, Q), f_t = x_t[0], x_0 ~ N(0, P∞).
struct MaternStateSpace {
  MatrixXd transition;   // A
  MatrixXd process_cov;  // Q
  MatrixXd stationary;   // P∞

  [[nodiscard]] Eigen::Index order() const { return transition.rows(); }
};

inline MaternStateSpace matern_state_space(const MaternKernel& k, double step = 1.0) {
  const double v = k.variance();
  MatrixXd f, pinf;
  switch (k.smoothness()) {
    case Smoothness::Half: {
      const double lam = 1.0 / k.lengthscale();
      f = MatrixXd::Constant(1, 1, -lam);
      pinf = MatrixXd::Constant(1, 1, v);
      break;
    }
    case Smoothness::ThreeHalves: {
      const double lam = std::sqrt(3.0) / k.lengthscale();
      f.resize(2, 2);
      f << 0.0, 1.0, -lam * lam, -2.0 * lam;
      pinf = MatrixXd::Zero(2, 2);
      pinf(0, 0) = v;
      pinf(1, 1) = lam * lam * v;
      break;
    }
    case Smoothness::FiveHalves: {
      const double lam = std::sqrt(5.0) / k.lengthscale();
      f.resize(3, 3);
      f << 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -lam * lam * lam, -3.0 * lam * lam, -3.0 * lam;
      const double kappa = lam * lam * v / 3.0;
      pinf.resize(3, 3);
      pinf << v, 0.0, -kappa, 0.0, kappa, 0.0, -kappa, 0.0, std::pow(lam, 4) * v;
      break;
    }
  }
  MaternStateSpace ss;
  ss.transition = (f * step).exp();
  ss.stationary = pinf;
  ss.process_cov = pinf - ss.transition * pinf * ss.transition.transpose();
  ss.process_cov = 0.5 * (ss.process_cov + ss.process_cov.transpose());
  return ss;
}

/// Joint model of P latent unit processes g_q with a shared Matérn law, observed
/// through y = m + (L ⊗ h) x + ε. State layout: process-major, `order` entries each.
struct IcmStateSpace {
  MaternStateSpace base;
  MatrixXd factor;  // L, P×P
  VectorXd noise;   // D

  [[nodiscard]] Eigen::Index processes() const { return factor.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return processes() * base.order(); }

  /// H x for a joint state vector.
  [[nodiscard]] VectorXd observe(const VectorXd& x) const {
    const Eigen::Index s = base.order();
    VectorXd g(processes());
    for (Eigen::Index q = 0; q < processes(); ++q) g[q] = x[q * s];
    return factor * g;
  }

  /// M Hᵀ for a dim()×dim() matrix M.
  [[nodiscard]] MatrixXd right_observe_t(const MatrixXd& m) const {
    const Eigen::Index s = base.order();
    MatrixXd cols(m.rows(), processes());
    for (Eigen::Index q = 0; q < processes(); ++q) cols.col(q) = m.col(q * s);
    return cols * factor.transpose();
  }

  /// H rows of a dim()×P matrix (i.e. H · N for N = M Hᵀ).
  [[nodiscard]] MatrixXd left_observe(const MatrixXd& n) const {
    const Eigen::Index s = base.order();
    MatrixXd rows(processes(), n.cols());
    for (Eigen::Index q = 0; q < processes(); ++q) rows.row(q) = n.row(q * s);
    return factor * rows;
  }

  [[nodiscard]] VectorXd predict_mean(const VectorXd& x) const {
    const Eigen::Index s = base.order();
    VectorXd out(x.size());
    for (Eigen::Index q = 0; q < processes(); ++q) out.segment(q * s, s) = base.transition * x.segment(q * s, s);
    return out;
  }

  [[nodiscard]] MatrixXd predict_cov(const MatrixXd& p) const {
    const Eigen::Index s = base.order(), n = processes();
    MatrixXd tmp(p.rows(), p.cols());
    // Left multiply by blockdiag(A), then right multiply by blockdiag(A)ᵀ.
    for (Eigen::Index q = 0; q < n; ++q) tmp.middleRows(q * s, s) = base.transition * p.middleRows(q * s, s);
    MatrixXd out(p.rows(), p.cols());
    for (Eigen::Index q = 0; q < n; ++q) out.middleCols(q * s, s) = tmp.middleCols(q * s, s) * base.transition.transpose();
    for (Eigen::Index q = 0; q < n; ++q) out.block(q * s, q * s, s, s) += base.process_cov;
    return out;
  }

  [[nodiscard]] MatrixXd initial_cov() const {
    const Eigen::Index s = base.order();
    MatrixXd out = MatrixXd::Zero(dim(), dim());
    for (Eigen::Index q = 0; q < processes(); ++q) out.block(q * s, q * s, s, s) = base.stationary;
    return out;
  }
};

inline IcmStateSpace icm_state_space(const MaternKernel& k, const TaskCovariance& task, const NoiseModel& noise) {
  return {matern_state_space(k), task.cholesky_factor(), noise.variances()};
}

}  // namespace sgpmon
