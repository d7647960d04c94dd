#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sgpmon/likelihood.hpp"
#include "sgpmon/model.hpp"
#include "sgpmon/optimize.hpp"

namespace sgpmon {

struct EmissionFitConfig {
  /// One temporal kernel for every state instead of one per state.
  bool shared_temporal = false;
  /// One task covariance K^Y for every state.
  bool shared_task = true;
  bool train_noise = true;
  bool train_task = true;
  /// Hold L(0,0) = 1 so the temporal variances carry the overall scale.
  bool pin_task_scale = true;
  bool use_fft = false;
  /// Step for finite-difference gradients on the FFT route.
  double fd_step = 1e-5;
  OptimizerConfig optimizer;
};

struct EmissionFitReport {
  double initial_objective = 0.0;
  double final_objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Maps the emission parameters of the trained states to an unconstrained vector:
/// per temporal block (log σ², log ℓ), per task block the lower triangle of L
/// (log on the diagonal, L(0,0) optionally pinned), then log noise variances.
class EmissionParameterization {
 public:
  EmissionParameterization(const SwitchingGPModel& model, const EmissionFitConfig& cfg)
      : cfg_(cfg), p_(model.num_features) {
    for (int j = 0; j < model.num_states; ++j) {
      if (model.trained[static_cast<std::size_t>(j)]) states_.push_back(j);
    }
    if (states_.empty()) fail(ErrorKind::InsufficientData, "no trained state to fit emissions for");
    Eigen::Index offset = 0;
    for (std::size_t s = 0; s < states_.size(); ++s) {
      temporal_block_[states_[s]] = cfg.shared_temporal ? 0 : static_cast<int>(s);
      task_block_[states_[s]] = cfg.shared_task ? 0 : static_cast<int>(s);
    }
    num_temporal_ = cfg.shared_temporal ? 1 : static_cast<int>(states_.size());
    num_task_ = cfg.train_task ? (cfg.shared_task ? 1 : static_cast<int>(states_.size())) : 0;
    temporal_offset_ = offset;
    offset += 2 * num_temporal_;
    task_offset_ = offset;
    task_entries_ = p_ * (p_ + 1) / 2 - (cfg.pin_task_scale ? 1 : 0);
    offset += num_task_ * task_entries_;
    noise_offset_ = offset;
    if (cfg.train_noise) offset += p_;
    size_ = offset;
  }

  [[nodiscard]] Eigen::Index size() const { return size_; }
  [[nodiscard]] const std::vector<int>& states() const { return states_; }

  /// Rescales the model so that the pinned entry equals one without changing any
  /// covariance, and makes shared blocks consistent (taken from the first trained state).
  void normalize(SwitchingGPModel& m) const {
    const int first = states_.front();
    for (int j : states_) {
      auto& e = m.emissions[static_cast<std::size_t>(j)];
      if (cfg_.shared_task) e.task = m.emissions[static_cast<std::size_t>(first)].task;
      if (cfg_.shared_temporal) e.temporal = m.emissions[static_cast<std::size_t>(first)].temporal;
    }
    if (!cfg_.pin_task_scale || !cfg_.train_task) return;
    if (cfg_.shared_task && !cfg_.shared_temporal) {
      const double c = m.emissions[static_cast<std::size_t>(first)].task.cholesky_factor()(0, 0);
      for (int j : states_) rescale(m.emissions[static_cast<std::size_t>(j)], c);
    } else if (!cfg_.shared_task) {
      for (int j : states_) {
        auto& e = m.emissions[static_cast<std::size_t>(j)];
        rescale(e, e.task.cholesky_factor()(0, 0));
      }
    } else {
      // Shared temporal and shared task: the scale lives in the shared variance.
      const double c = m.emissions[static_cast<std::size_t>(first)].task.cholesky_factor()(0, 0);
      for (int j : states_) rescale(m.emissions[static_cast<std::size_t>(j)], c);
    }
  }

  [[nodiscard]] VectorXd pack(const SwitchingGPModel& m) const {
    VectorXd x(size_);
    for (int j : states_) {
      const auto& e = m.emissions[static_cast<std::size_t>(j)];
      const Eigen::Index t = temporal_offset_ + 2 * temporal_block_.at(j);
      x[t] = std::log(e.temporal.variance());
      x[t + 1] = std::log(e.temporal.lengthscale());
      if (cfg_.train_task) {
        const MatrixXd& l = e.task.cholesky_factor();
        Eigen::Index k = task_offset_ + task_block_.at(j) * task_entries_;
        for (Eigen::Index r = 0; r < p_; ++r)
          for (Eigen::Index c = 0; c <= r; ++c) {
            if (pinned(r, c)) continue;
            x[k++] = r == c ? std::log(l(r, c)) : l(r, c);
          }
      }
    }
    if (cfg_.train_noise) x.segment(noise_offset_, p_) = m.noise.variances().array().log();
    return x;
  }

  void unpack(const VectorXd& x, SwitchingGPModel& m) const {
    for (int j : states_) {
      auto& e = m.emissions[static_cast<std::size_t>(j)];
      const Eigen::Index t = temporal_offset_ + 2 * temporal_block_.at(j);
      e.temporal = MaternKernel(std::exp(x[t]), std::exp(x[t + 1]), e.temporal.smoothness());
      if (cfg_.train_task) {
        MatrixXd l = MatrixXd::Zero(p_, p_);
        Eigen::Index k = task_offset_ + task_block_.at(j) * task_entries_;
        for (Eigen::Index r = 0; r < p_; ++r)
          for (Eigen::Index c = 0; c <= r; ++c) {
            if (pinned(r, c)) {
              l(r, c) = 1.0;
              continue;
            }
            l(r, c) = r == c ? std::exp(x[k]) : x[k];
            ++k;
          }
        e.task = TaskCovariance(std::move(l));
      }
    }
    if (cfg_.train_noise) m.noise = NoiseModel(x.segment(noise_offset_, p_).array().exp());
  }

  /// Adds one state's segment gradient into the gradient over x.
  void accumulate(int state, const SegmentGradient& g, const SwitchingGPModel& m, VectorXd& out) const {
    const Eigen::Index t = temporal_offset_ + 2 * temporal_block_.at(state);
    out[t] += g.dlog_variance;
    out[t + 1] += g.dlog_lengthscale;
    if (cfg_.train_task) {
      const MatrixXd& l = m.emissions[static_cast<std::size_t>(state)].task.cholesky_factor();
      Eigen::Index k = task_offset_ + task_block_.at(state) * task_entries_;
      for (Eigen::Index r = 0; r < p_; ++r)
        for (Eigen::Index c = 0; c <= r; ++c) {
          if (pinned(r, c)) continue;
          out[k++] += r == c ? g.dfactor(r, c) * l(r, c) : g.dfactor(r, c);
        }
    }
    if (cfg_.train_noise) out.segment(noise_offset_, p_) += g.dlog_noise;
  }

 private:
  [[nodiscard]] bool pinned(Eigen::Index r, Eigen::Index c) const {
    return cfg_.pin_task_scale && r == 0 && c == 0;
  }

  static void rescale(StateEmission& e, double c) {
    e.task = TaskCovariance(e.task.cholesky_factor() / c);
    e.temporal = MaternKernel(e.temporal.variance() * c * c, e.temporal.lengthscale(), e.temporal.smoothness());
  }

  EmissionFitConfig cfg_;
  Eigen::Index p_;
  std::vector<int> states_;
  std::map<int, int> temporal_block_, task_block_;
  int num_temporal_ = 0, num_task_ = 0;
  Eigen::Index temporal_offset_ = 0, task_offset_ = 0, noise_offset_ = 0, task_entries_ = 0, size_ = 0;
};

/// Objective over the unconstrained emission parameters; data residuals are taken
/// against the (fixed) state means of `base`.
class EmissionObjective {
 public:
  EmissionObjective(const SwitchingGPModel& base, const std::vector<SegmentedSeries>& data,
                    const EmissionFitConfig& cfg)
      : base_(base), cfg_(cfg), param_(base, cfg), segments_(residual_segments(base, data)) {
    base_.validate();
    if (segments_.empty()) fail(ErrorKind::InsufficientData, "no labeled segments to fit emissions on");
    for (const auto& s : segments_) {
      if (!base_.trained[static_cast<std::size_t>(s.state)]) {
        fail(ErrorKind::InvalidInput, "segment of untrained state " + std::to_string(s.state + 1));
      }
      if (cfg.use_fft && !s.full) fail(ErrorKind::InvalidInput, "FFT training requires fully observed data");
    }
  }

  [[nodiscard]] const EmissionParameterization& parameterization() const { return param_; }

  [[nodiscard]] SwitchingGPModel model_at(const VectorXd& x) const {
    SwitchingGPModel m = base_;
    param_.unpack(x, m);
    return m;
  }

  double operator()(const VectorXd& x, VectorXd& grad) const {
    if (cfg_.use_fft) return fft_value_and_fd_gradient(x, grad);
    const SwitchingGPModel m = model_at(x);
    grad = VectorXd::Zero(x.size());
    std::map<std::pair<int, Eigen::Index>, TemporalEigen> cache;
    SegmentGradient g;
    double total = 0.0;
    for (const auto& seg : segments_) {
      const auto& em = m.emissions[static_cast<std::size_t>(seg.state)];
      g.reset(m.num_features);
      try {
        if (seg.full) {
          const auto key = std::make_pair(seg.state, seg.residuals.rows());
          auto it = cache.find(key);
          if (it == cache.end()) it = cache.emplace(key, temporal_eigen(em.temporal, seg.residuals.rows())).first;
          total += segment_nll_exact(em.temporal, em.task.cholesky_factor(), m.noise.variances(), seg.residuals,
                                     it->second, &g);
        } else {
          total += segment_nll_masked(em.temporal, em.task.cholesky_factor(), m.noise.variances(), seg.residuals,
                                      seg.mask, &g);
        }
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::NonPositiveDefinite) throw;
        fail(ErrorKind::NonPositiveDefinite, std::string(err.what()) + " (state " + std::to_string(seg.state + 1) + ")");
      }
      param_.accumulate(seg.state, g, m, grad);
    }
    return total;
  }

  [[nodiscard]] double value(const VectorXd& x) const {
    const SwitchingGPModel m = model_at(x);
    if (!cfg_.use_fft) {
      VectorXd g;
      return (*this)(x, g);
    }
    double total = 0.0;
    for (const auto& seg : segments_) {
      const auto& em = m.emissions[static_cast<std::size_t>(seg.state)];
      total += segment_nll_fft(em.temporal, em.task.matrix(), m.noise.variances(), seg.residuals);
    }
    return total;
  }

 private:
  double fft_value_and_fd_gradient(const VectorXd& x, VectorXd& grad) const {
    const double f = value(x);
    grad.resize(x.size());
    VectorXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double h = cfg_.fd_step * std::max(1.0, std::abs(x[i]));
      xp[i] = x[i] + h;
      const double fp = value(xp);
      xp[i] = x[i] - h;
      const double fm = value(xp);
      xp[i] = x[i];
      grad[i] = (fp - fm) / (2.0 * h);
    }
    return f;
  }

  SwitchingGPModel base_;
  EmissionFitConfig cfg_;
  EmissionParameterization param_;
  std::vector<ResidualSegment> segments_;
};

/// Fits kernel, task and noise parameters of the trained states by minimizing
/// the population negative log-likelihood; means stay fixed.
inline SwitchingGPModel fit_emissions(const std::vector<SegmentedSeries>& data, SwitchingGPModel init,
                                      const EmissionFitConfig& cfg = {}, EmissionFitReport* report = nullptr) {
  init.validate();
  EmissionParameterization(init, cfg).normalize(init);
  const EmissionObjective objective(init, data, cfg);
  const VectorXd x0 = objective.parameterization().pack(init);
  const auto res = minimize_lbfgs([&](const VectorXd& x, VectorXd& g) { return objective(x, g); }, x0, cfg.optimizer);
  if (report) *report = {res.initial_value, res.value, res.iterations, res.converged};
  SwitchingGPModel out = objective.model_at(res.x);
  out.shared_task = cfg.shared_task;
  return out;
}

/// Pooled per-state means over observed entries.
inline std::vector<VectorXd> state_means(const std::vector<SegmentedSeries>& data, int num_states, int num_features,
                                         std::vector<bool>* present = nullptr) {
  std::vector<VectorXd> sum(static_cast<std::size_t>(num_states), VectorXd::Zero(num_features));
  std::vector<VectorXd> count = sum;
  for (const auto& s : data) {
    for (Eigen::Index t = 0; t < s.length(); ++t) {
      const int j = s.labels[static_cast<std::size_t>(t)];
      if (j < 0 || j >= num_states) fail(ErrorKind::InvalidInput, "label outside the model's state range");
      for (Eigen::Index p = 0; p < num_features; ++p) {
        if (s.mask.size() != 0 && !s.mask(t, p)) continue;
        sum[static_cast<std::size_t>(j)][p] += s.observations(t, p);
        count[static_cast<std::size_t>(j)][p] += 1.0;
      }
    }
  }
  if (present) present->assign(static_cast<std::size_t>(num_states), false);
  for (int j = 0; j < num_states; ++j) {
    const auto u = static_cast<std::size_t>(j);
    if (present) (*present)[u] = count[u].sum() > 0;
    sum[u] = (count[u].array() > 0).select(sum[u].cwiseQuotient(count[u].cwiseMax(1.0)), 0.0);
  }
  return sum;
}

struct FitConfig {
  EmissionFitConfig emission;
  /// Overrides the data-driven duration cap.
  std::optional<int> duration_cap;
  double cap_quantile = 0.999;
  /// Estimate the initial distribution from first-segment frequencies instead of uniform.
  bool estimate_initial = false;
  /// Skip kernel optimization (durations, transitions and means only).
  bool skip_emissions = false;
};

struct FitReport {
  EmissionFitReport emission;
  std::vector<std::string> warnings;
};

/// Initial emission parameters from pooled residual statistics: K^Y from 90% of
/// the residual covariance, noise from the remaining 10% of each variance.
inline void initialize_emissions(SwitchingGPModel& m, const std::vector<SegmentedSeries>& data,
                                 double lengthscale = 2.0) {
  const auto segments = residual_segments(m, data);
  MatrixXd cov = MatrixXd::Zero(m.num_features, m.num_features);
  double n = 0;
  for (const auto& seg : segments) {
    if (!seg.full) continue;
    cov += seg.residuals.transpose() * seg.residuals;
    n += static_cast<double>(seg.residuals.rows());
  }
  if (n < 2) cov = MatrixXd::Identity(m.num_features, m.num_features);
  else cov /= n;
  const VectorXd var = cov.diagonal().cwiseMax(1e-6);
  cov.diagonal() = var;
  const MatrixXd task = 0.9 * cov + 1e-6 * var.maxCoeff() * MatrixXd::Identity(m.num_features, m.num_features);
  for (int j = 0; j < m.num_states; ++j) {
    auto& e = m.emissions[static_cast<std::size_t>(j)];
    e.temporal = MaternKernel(1.0, lengthscale, e.temporal.smoothness());
    e.task = TaskCovariance::from_matrix(task);
  }
  m.noise = NoiseModel(0.1 * var);
}

/// Full supervised fit: Gamma durations, transition counts, state means, then
/// emission kernels. States absent from the data are flagged untrained and keep
/// the skeleton's parameters.
inline SwitchingGPModel fit(const SwitchingGPModel& skeleton, const std::vector<SegmentedSeries>& data,
                            const FitConfig& cfg = {}, FitReport* report = nullptr) {
  SwitchingGPModel m = skeleton;
  const int a = m.num_states;
  if (data.empty()) fail(ErrorKind::InsufficientData, "no training series");
  std::vector<std::vector<Segment>> seqs;
  std::vector<std::vector<double>> durations(static_cast<std::size_t>(a));
  VectorXd first_counts = VectorXd::Zero(a);
  for (const auto& s : data) {
    if (!s.labeled()) fail(ErrorKind::InvalidInput, "training series must be labeled");
    seqs.push_back(segment_series(s.labels));
    for (const auto& seg : seqs.back()) {
      if (seg.state < 0 || seg.state >= a) fail(ErrorKind::InvalidInput, "label outside the model's state range");
      durations[static_cast<std::size_t>(seg.state)].push_back(static_cast<double>(seg.duration));
    }
    if (!seqs.back().empty()) first_counts[seqs.back().front().state] += 1.0;
  }
  FitReport rep;
  m.trained.assign(static_cast<std::size_t>(a), false);
  for (int j = 0; j < a; ++j) {
    const auto& d = durations[static_cast<std::size_t>(j)];
    if (d.empty()) {
      rep.warnings.push_back("state " + std::to_string(j + 1) + " is absent from the training data; marked untrained");
      continue;
    }
    m.trained[static_cast<std::size_t>(j)] = true;
    try {
      m.durations[static_cast<std::size_t>(j)] = fit_duration_gamma(d);
    } catch (const Error& err) {
      throw Error(err.kind(), std::string(err.what()) + " (state " + std::to_string(j + 1) + ")");
    }
  }
  auto tf = fit_transitions(seqs, a);
  for (auto& w : tf.warnings) rep.warnings.push_back(std::move(w));
  m.transitions = tf.matrix;

  std::vector<bool> present;
  const auto means = state_means(data, a, m.num_features, &present);
  for (int j = 0; j < a; ++j) {
    if (m.trained[static_cast<std::size_t>(j)]) m.emissions[static_cast<std::size_t>(j)].mean = means[static_cast<std::size_t>(j)];
  }

  if (cfg.duration_cap) {
    m.duration_cap = *cfg.duration_cap;
  } else {
    double q = 1.0;
    for (int j = 0; j < a; ++j) {
      if (m.trained[static_cast<std::size_t>(j)]) q = std::max(q, m.durations[static_cast<std::size_t>(j)].quantile(cfg.cap_quantile));
    }
    m.duration_cap = static_cast<int>(std::ceil(q));
  }
  if (cfg.estimate_initial) {
    m.initial = first_counts / first_counts.sum();
  } else {
    m.initial.resize(0);
  }
  if (!cfg.skip_emissions) m = fit_emissions(data, m, cfg.emission, &rep.emission);
  if (report) *report = std::move(rep);
  return m;
}

}  // namespace sgpmon
