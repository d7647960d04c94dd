#pragma once

#include <cmath>
#include <vector>

#include "sgpmon/kernels.hpp"
#include "sgpmon/model.hpp"
#include "sgpmon/numeric.hpp"

namespace sgpmon {

/// One observed scalar: feature `feature` at grid time `time`.
struct ObservedEntry {
  double time;
  int feature;
  double value;
};

/// A (time, feature) coordinate of the multivariate process.
struct ProcessPoint {
  double time;
  int feature;
};

struct PosteriorSummary {
  VectorXd mean;
  MatrixXd covariance;
};

/// Prior covariance of the latent process between two point sets.
inline MatrixXd latent_cross_cov(const StateEmission& e, const MatrixXd& task,
                                 std::span<const ProcessPoint> a, std::span<const ProcessPoint> b) {
  MatrixXd k(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          task(a[i].feature, b[j].feature) * e.temporal(a[i].time - b[j].time);
    }
  }
  return k;
}

/// Gaussian conditional of the process at `query` given noisy `observed` entries
/// from the same segment. With `include_noise` the query covariance is that of
/// a fresh noisy observation rather than the latent function.
inline PosteriorSummary conditional_gaussian(const StateEmission& e, const NoiseModel& noise,
                                             std::span<const ObservedEntry> observed,
                                             std::span<const ProcessPoint> query, bool include_noise = false) {
  const MatrixXd task = e.task.matrix();
  std::vector<ProcessPoint> obs_pts;
  obs_pts.reserve(observed.size());
  for (const auto& o : observed) {
    if (!std::isfinite(o.value)) fail(ErrorKind::InvalidInput, "observed values must be finite");
    obs_pts.push_back({o.time, o.feature});
  }
  PosteriorSummary out;
  out.mean.resize(static_cast<Eigen::Index>(query.size()));
  for (std::size_t i = 0; i < query.size(); ++i) out.mean[static_cast<Eigen::Index>(i)] = e.mean[query[i].feature];
  out.covariance = latent_cross_cov(e, task, query, query);
  if (include_noise) {
    for (std::size_t i = 0; i < query.size(); ++i) {
      out.covariance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += noise.variances()[query[i].feature];
    }
  }
  if (observed.empty()) return out;

  MatrixXd k_oo = latent_cross_cov(e, task, obs_pts, obs_pts);
  VectorXd resid(static_cast<Eigen::Index>(observed.size()));
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    k_oo(idx, idx) += noise.variances()[observed[i].feature] + kGramJitter * e.temporal.variance();
    resid[idx] = observed[i].value - e.mean[observed[i].feature];
  }
  const auto llt = checked_llt(k_oo, "segment observations");
  const MatrixXd k_oq = latent_cross_cov(e, task, obs_pts, query);
  const MatrixXd w = llt.matrixL().solve(k_oq);
  out.mean += k_oq.transpose() * llt.solve(resid);
  out.covariance -= w.transpose() * w;
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

/// Latent posterior of feature `feature` at `query_times` given in-segment observations.
inline PosteriorSummary posterior_predict(const StateEmission& e, const NoiseModel& noise,
                                          std::span<const ObservedEntry> observed,
                                          std::span<const double> query_times, int feature) {
  std::vector<ProcessPoint> q;
  q.reserve(query_times.size());
  for (double t : query_times) q.push_back({t, feature});
  return conditional_gaussian(e, noise, observed, q);
}

/// Observed entries of a window (rows = consecutive steps starting at time 0),
/// in feature-major order.
inline std::vector<ObservedEntry> observed_entries(const MatrixXd& window, const MaskMatrix& mask) {
  std::vector<ObservedEntry> out;
  for (Eigen::Index p = 0; p < window.cols(); ++p) {
    for (Eigen::Index t = 0; t < window.rows(); ++t) {
      if (mask.size() == 0 || mask(t, p)) out.push_back({static_cast<double>(t), static_cast<int>(p), window(t, p)});
    }
  }
  return out;
}

/// log b_j: Gaussian log-density of the observed entries of a d×P window under the
/// state's segment marginal N(m_j, K_j + noise). Unobserved entries are marginalized
/// out; a fully masked window carries no evidence and scores 0.
inline double segment_emission_loglik(const StateEmission& e, const NoiseModel& noise, const MatrixXd& window,
                                      const MaskMatrix& mask) {
  const auto entries = observed_entries(window, mask);
  if (entries.empty()) return 0.0;
  const MatrixXd task = e.task.matrix();
  const auto n = static_cast<Eigen::Index>(entries.size());
  MatrixXd cov(n, n);
  VectorXd resid(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = entries[static_cast<std::size_t>(i)];
    resid[i] = a.value - e.mean[a.feature];
    for (Eigen::Index j = 0; j <= i; ++j) {
      const auto& b = entries[static_cast<std::size_t>(j)];
      cov(i, j) = cov(j, i) = task(a.feature, b.feature) * e.temporal(a.time - b.time);
    }
    cov(i, i) += noise.variances()[a.feature];
  }
  return gaussian_logpdf_centered(checked_llt(cov, "emission window"), resid);
}

struct TrajectoryMetrics {
  double mse;
  double abs;
  Eigen::Index count;
};

/// Mean squared and mean absolute error over the entries selected by `mask`.
inline TrajectoryMetrics trajectory_metrics(const MatrixXd& predicted, const MatrixXd& truth, const MaskMatrix& mask) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols() || mask.rows() != truth.rows() ||
      mask.cols() != truth.cols()) {
    fail(ErrorKind::InvalidInput, "trajectory_metrics: shape mismatch");
  }
  double se = 0.0, ae = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
      if (!mask(i, j)) continue;
      const double d = predicted(i, j) - truth(i, j);
      se += d * d;
      ae += std::abs(d);
      ++count;
    }
  }
  if (count == 0) fail(ErrorKind::UndefinedMetric, "trajectory metrics need at least one evaluated entry");
  return {se / static_cast<double>(count), ae / static_cast<double>(count), count};
}

}  // namespace sgpmon
