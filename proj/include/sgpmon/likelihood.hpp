#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sgpmon/circulant.hpp"
#include "sgpmon/gp_predict.hpp"
#include "sgpmon/kernels.hpp"
#include "sgpmon/model.hpp"
#include "sgpmon/numeric.hpp"

namespace sgpmon {

/// Partial derivatives of one segment's negative log-likelihood with respect to
/// the unconstrained emission parameters of the state that produced it.
struct SegmentGradient {
  double dlog_variance = 0.0;
  double dlog_lengthscale = 0.0;
  MatrixXd dfactor;    // d/dL (lower triangle meaningful)
  VectorXd dlog_noise; // d/d log σ_p²

  void reset(Eigen::Index p) {
    dlog_variance = dlog_lengthscale = 0.0;
    dfactor = MatrixXd::Zero(p, p);
    dlog_noise = VectorXd::Zero(p);
  }
};

/// Eigendecomposition of a temporal Gram matrix, reusable across segments of the
/// same state and length.
struct TemporalEigen {
  VectorXd values;
  MatrixXd vectors;
  MatrixXd gram;
};

inline TemporalEigen temporal_eigen(const MaternKernel& k, Eigen::Index n) {
  TemporalEigen out;
  out.gram = gram_matrix(k, n - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(out.gram);
  out.values = es.eigenvalues().cwiseMax(0.0);
  out.vectors = es.eigenvectors();
  return out;
}

/// Exact negative log-likelihood of a fully observed segment of residuals
/// (rows = time, columns = features) under K^Y ⊗ K^T + D ⊗ I, through the joint
/// eigenbasis of K^T and D^{-1/2} K^Y D^{-1/2}: O(N³ + P³ + N²P + NP²).
inline double segment_nll_exact(const MaternKernel& kernel, const MatrixXd& factor, const VectorXd& noise,
                                const MatrixXd& residuals, const TemporalEigen& te,
                                SegmentGradient* grad = nullptr) {
  const Eigen::Index n = residuals.rows();
  const Eigen::Index p = residuals.cols();
  const MatrixXd task = factor * factor.transpose();
  const VectorXd inv_sd = noise.array().rsqrt();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(inv_sd.asDiagonal() * task * inv_sd.asDiagonal());
  const VectorXd s = es.eigenvalues().cwiseMax(0.0);
  const MatrixXd& u = es.eigenvectors();
  const MatrixXd& v = te.vectors;
  const VectorXd& e = te.values;

  MatrixXd lambda(n, p);
  for (Eigen::Index a = 0; a < p; ++a) lambda.col(a) = (e * s[a]).array() + 1.0;
  const MatrixXd y = v.transpose() * (residuals * inv_sd.asDiagonal() * u);
  const MatrixXd scaled = y.cwiseQuotient(lambda);
  const double quad = y.cwiseProduct(scaled).sum();
  const double logdet = lambda.array().log().sum() + static_cast<double>(n) * noise.array().log().sum();
  const double nll = 0.5 * (logdet + quad + static_cast<double>(n * p) * kLog2Pi);
  if (!grad) return nll;

  const MatrixXd alpha = (v * scaled * u.transpose()) * inv_sd.asDiagonal();  // Σ⁻¹ r as N×P
  const MatrixXd inv_lambda = lambda.cwiseInverse();

  // Temporal variance: dK^T = K^T.
  const MatrixXd kt_alpha = te.gram * alpha;
  {
    const double trace = (e * s.transpose()).cwiseProduct(inv_lambda).sum();
    const double q = alpha.cwiseProduct(kt_alpha * task).sum();
    grad->dlog_variance += 0.5 * (trace - q);
  }
  // Temporal lengthscale.
  {
    MatrixXd dk(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) dk(i, j) = kernel.dlog_lengthscale(static_cast<double>(i - j));
    const VectorXd dk_diag = (v.transpose() * dk * v).diagonal();
    const double trace = (dk_diag * s.transpose()).cwiseProduct(inv_lambda).sum();
    const double q = alpha.cwiseProduct(dk * alpha * task).sum();
    grad->dlog_lengthscale += 0.5 * (trace - q);
  }
  // Task factor: d/dL = (M - Q) L.
  {
    const VectorXd w = (inv_lambda.transpose() * e);  // w_a = Σ_t e_t / Λ_ta
    const MatrixXd ut = inv_sd.asDiagonal() * u;
    const MatrixXd m = ut * w.asDiagonal() * ut.transpose();
    const MatrixXd q = alpha.transpose() * kt_alpha;
    grad->dfactor += ((m - q) * factor).triangularView<Eigen::Lower>().toDenseMatrix();
  }
  // Noise.
  {
    const VectorXd z = inv_lambda.colwise().sum().transpose();
    for (Eigen::Index q = 0; q < p; ++q) {
      const double trace = u.row(q).cwiseAbs2().dot(z);
      grad->dlog_noise[q] += 0.5 * (trace - noise[q] * alpha.col(q).squaredNorm());
    }
  }
  return nll;
}

/// Negative log-likelihood of the observed entries of a partially observed
/// segment (dense marginal), with optional gradient.
inline double segment_nll_masked(const MaternKernel& kernel, const MatrixXd& factor, const VectorXd& noise,
                                 const MatrixXd& residuals, const MaskMatrix& mask,
                                 SegmentGradient* grad = nullptr) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> idx;  // (time, feature), feature-major
  for (Eigen::Index q = 0; q < residuals.cols(); ++q)
    for (Eigen::Index t = 0; t < residuals.rows(); ++t)
      if (mask(t, q)) idx.emplace_back(t, q);
  if (idx.empty()) return 0.0;
  const auto n = static_cast<Eigen::Index>(idx.size());
  const MatrixXd task = factor * factor.transpose();
  MatrixXd cov(n, n);
  VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [ti, fi] = idx[static_cast<std::size_t>(i)];
    r[i] = residuals(ti, fi);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto [tj, fj] = idx[static_cast<std::size_t>(j)];
      cov(i, j) = task(fi, fj) * kernel(static_cast<double>(ti - tj));
    }
    cov(i, i) += noise[fi];
  }
  const auto llt = checked_llt(cov, "masked segment");
  const VectorXd alpha = llt.solve(r);
  const double nll = 0.5 * (llt_logdet(llt) + r.dot(alpha) + static_cast<double>(n) * kLog2Pi);
  if (!grad) return nll;

  const MatrixXd w = llt.solve(MatrixXd::Identity(n, n)) - alpha * alpha.transpose();
  const Eigen::Index p = residuals.cols();
  MatrixXd g_task = MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [ti, fi] = idx[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto [tj, fj] = idx[static_cast<std::size_t>(j)];
      const double lag = static_cast<double>(ti - tj);
      const double kij = kernel(lag);
      grad->dlog_variance += 0.5 * w(i, j) * task(fi, fj) * kij;
      grad->dlog_lengthscale += 0.5 * w(i, j) * task(fi, fj) * kernel.dlog_lengthscale(lag);
      g_task(fi, fj) += 0.5 * w(i, j) * kij;
    }
    grad->dlog_noise[fi] += 0.5 * noise[fi] * w(i, i);
  }
  grad->dfactor += (2.0 * g_task * factor).triangularView<Eigen::Lower>().toDenseMatrix();
  return nll;
}

/// Negative log-likelihood of a fully observed segment through the FFT route.
/// Falls back to the exact path when the embedding is not positive definite.
inline double segment_nll_fft(const MaternKernel& kernel, const MatrixXd& task, const VectorXd& noise,
                              const MatrixXd& residuals) {
  try {
    return -fast_segment_loglik(kernel, task, noise, residuals).loglik;
  } catch (const Error& err) {
    if (err.kind() != ErrorKind::SingularEmbedding) throw;
    const TaskCovariance tc = TaskCovariance::from_matrix(task);
    return segment_nll_exact(kernel, tc.cholesky_factor(), noise, residuals,
                             temporal_eigen(kernel, residuals.rows()));
  }
}

/// A labeled segment of one series, with residuals against its state mean.
struct ResidualSegment {
  int state;
  MatrixXd residuals;
  MaskMatrix mask;
  bool full;
};

inline std::vector<ResidualSegment> residual_segments(const SwitchingGPModel& model,
                                                      const std::vector<SegmentedSeries>& data) {
  std::vector<ResidualSegment> out;
  for (const auto& series : data) {
    if (!series.labeled()) fail(ErrorKind::InvalidInput, "likelihood needs labeled series");
    if (series.observations.cols() != model.num_features) {
      fail(ErrorKind::InvalidInput, "series feature count does not match the model");
    }
    for (const auto& seg : segment_series(series.labels)) {
      if (seg.state < 0 || seg.state >= model.num_states) {
        fail(ErrorKind::InvalidInput, "label outside the model's state range");
      }
      ResidualSegment rs;
      rs.state = seg.state;
      rs.residuals = series.observations.middleRows(seg.start, seg.duration).rowwise() -
                     model.emissions[static_cast<std::size_t>(seg.state)].mean.transpose();
      if (series.mask.size() == 0) {
        rs.mask = MaskMatrix::Constant(seg.duration, model.num_features, true);
      } else {
        rs.mask = series.mask.middleRows(seg.start, seg.duration);
      }
      rs.full = rs.mask.all();
      // Unobserved entries may hold NaN placeholders.
      for (Eigen::Index i = 0; i < rs.residuals.size(); ++i) {
        if (!rs.mask.data()[i]) rs.residuals.data()[i] = 0.0;
      }
      out.push_back(std::move(rs));
    }
  }
  return out;
}

/// Population negative log-likelihood: the sum over subjects and labeled segments
/// of the Gaussian negative log-density of residuals under K_i^Y ⊗ K_i^T + D ⊗ I.
/// Summation is sequential in data order. With `use_fft` every segment must be
/// fully observed and is scored by the circulant route.
inline double negative_loglik(const SwitchingGPModel& model, const std::vector<SegmentedSeries>& data,
                              bool use_fft = false) {
  model.validate();
  const auto segments = residual_segments(model, data);
  std::map<std::pair<int, Eigen::Index>, TemporalEigen> cache;
  double total = 0.0;
  for (const auto& seg : segments) {
    const auto& em = model.emissions[static_cast<std::size_t>(seg.state)];
    try {
      if (use_fft) {
        if (!seg.full) fail(ErrorKind::InvalidInput, "FFT likelihood requires fully observed segments");
        total += segment_nll_fft(em.temporal, em.task.matrix(), model.noise.variances(), seg.residuals);
      } else if (seg.full) {
        const auto key = std::make_pair(seg.state, seg.residuals.rows());
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, temporal_eigen(em.temporal, seg.residuals.rows())).first;
        total += segment_nll_exact(em.temporal, em.task.cholesky_factor(), model.noise.variances(),
                                   seg.residuals, it->second);
      } else {
        total += segment_nll_masked(em.temporal, em.task.cholesky_factor(), model.noise.variances(),
                                    seg.residuals, seg.mask);
      }
    } catch (const Error& err) {
      if (err.kind() == ErrorKind::NonPositiveDefinite) {
        fail(ErrorKind::NonPositiveDefinite,
             std::string(err.what()) + " (state " + std::to_string(seg.state + 1) + ")");
      }
      throw;
    }
  }
  return total;
}

}  // namespace sgpmon
