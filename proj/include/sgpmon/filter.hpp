#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sgpmon/gp_predict.hpp"
#include "sgpmon/model.hpp"
#include "sgpmon/numeric.hpp"
#include "sgpmon/state_space.hpp"

namespace sgpmon {

enum class EmissionBackend {
  /// Incremental Kalman recursion on the state-space form of the Matérn kernel.
  StateSpace,
  /// Recomputes the dense segment marginal over the buffered window (small problems only).
  Dense,
};

struct FilterConfig {
  /// Hypotheses whose log weight falls below max - threshold are dropped.
  double prune_log_threshold = 30.0;
  EmissionBackend backend = EmissionBackend::StateSpace;
};

/// One live hypothesis at time t: the current segment is in `state` and has
/// lasted `elapsed` steps including t. Its unnormalized log forward value is
/// log_start + log_b + log P(duration >= elapsed).
struct Hypothesis {
  int state = 0;
  int elapsed = 0;
  double log_start = 0.0;  // log P(segment of `state` starts at t-elapsed+1, y before it), normalized
  double log_b = 0.0;      // log density of the in-segment observations
  VectorXd x;              // Kalman mean of the latent state
  MatrixXd cov;            // Kalman covariance
};

struct ForwardState {
  std::vector<Hypothesis> hypotheses;
  Eigen::Index time_index = 0;  // rows absorbed so far
  double log_evidence = 0.0;    // log P(y_1..t)
  double last_increment = 0.0;  // log P(y_t | y_1..t-1)
  std::deque<VectorXd> window_rows;
  std::deque<MaskVector> window_masks;
};

/// A hypothesis at t+1 before y_{t+1} is seen, with its one-step predictive.
struct Candidate {
  int state = 0;
  int elapsed = 0;
  double log_start = 0.0;
  double log_b = 0.0;
  double log_weight = 0.0;  // normalized log P(hypothesis at t+1 | y_1..t)
  VectorXd x;               // predicted latent mean
  MatrixXd cov;             // predicted latent covariance
  MatrixXd cross;           // cov · Hᵀ (latent × features); empty for the dense backend
  VectorXd pred_mean;       // predictive mean of y_{t+1}
  MatrixXd pred_cov;        // predictive covariance of y_{t+1}, noise included
};

struct PredictedState {
  std::vector<Candidate> candidates;
  Eigen::Index time_index = 0;
  double log_evidence = 0.0;
  std::deque<VectorXd> window_rows;
  std::deque<MaskVector> window_masks;
};

struct MixtureComponent {
  int state = 0;
  int elapsed = 0;
  double log_weight = 0.0;
  VectorXd mean;
  MatrixXd cov;
};

/// Gaussian mixture over the features of one group.
struct PredictiveMixture {
  std::vector<int> group;
  std::vector<MixtureComponent> components;

  [[nodiscard]] VectorXd mean() const {
    VectorXd m = VectorXd::Zero(static_cast<Eigen::Index>(group.size()));
    for (const auto& c : components) m += std::exp(c.log_weight) * c.mean;
    return m;
  }

  [[nodiscard]] double log_density(const VectorXd& y) const {
    std::vector<double> terms;
    terms.reserve(components.size());
    for (const auto& c : components) {
      terms.push_back(c.log_weight + gaussian_logpdf_centered(checked_llt(c.cov, "mixture component"), y - c.mean));
    }
    return log_sum_exp(terms);
  }
};

inline std::vector<Eigen::Index> observed_indices(const MaskVector& mask) {
  std::vector<Eigen::Index> o;
  for (Eigen::Index p = 0; p < mask.size(); ++p)
    if (mask[p]) o.push_back(p);
  return o;
}

inline MatrixXd select_block(const MatrixXd& m, std::span<const Eigen::Index> rows, std::span<const Eigen::Index> cols) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
  return out;
}

inline VectorXd select_entries(const VectorXd& v, std::span<const Eigen::Index> idx) {
  VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

/// Explicit-duration forward filter over (state, elapsed duration) hypotheses.
/// Holds everything derived from the model that is reused at each step.
class SemiMarkovFilter {
 public:
  explicit SemiMarkovFilter(const SwitchingGPModel& model, FilterConfig cfg = {})
      : model_(model), cfg_(cfg), pmfs_(model.duration_pmfs()) {
    model_.validate();
    const int a = model_.num_states;
    log_trans_ = MatrixXd::Constant(a, a, kNegInf);
    for (int i = 0; i < a; ++i) {
      double total = 0.0;
      for (int j = 0; j < a; ++j)
        if (trained(j)) total += model_.transitions(i, j);
      for (int j = 0; j < a; ++j) {
        if (trained(j) && total > 0 && model_.transitions(i, j) > 0) log_trans_(i, j) = std::log(model_.transitions(i, j) / total);
      }
    }
    log_pi_ = VectorXd::Constant(a, kNegInf);
    VectorXd pi = model_.initial.size() ? model_.initial : VectorXd::Ones(a);
    double total = 0.0;
    for (int j = 0; j < a; ++j)
      if (trained(j)) total += pi[j];
    if (!(total > 0)) fail(ErrorKind::InvalidInput, "no trained state carries initial mass");
    for (int j = 0; j < a; ++j)
      if (trained(j) && pi[j] > 0) log_pi_[j] = std::log(pi[j] / total);
    for (int j = 0; j < a; ++j) {
      const auto& e = model_.emissions[static_cast<std::size_t>(j)];
      spaces_.push_back(icm_state_space(e.temporal, e.task, model_.noise));
      MatrixXd prior = e.temporal.variance() * e.task.matrix();
      prior.diagonal() += model_.noise.variances();
      prior_cov_.push_back(std::move(prior));
    }
  }

  [[nodiscard]] const SwitchingGPModel& model() const { return model_; }
  [[nodiscard]] const FilterConfig& config() const { return cfg_; }
  [[nodiscard]] bool trained(int j) const { return model_.trained[static_cast<std::size_t>(j)]; }
  [[nodiscard]] const DurationPmf& duration(int j) const { return pmfs_[static_cast<std::size_t>(j)]; }

  /// Conditional kernel of a new segment: P(next = j, duration = d | previous segment of i ended).
  [[nodiscard]] double duration_transition(int i, int j, int d) const {
    if (i == j && model_.num_states > 1) return 0.0;
    const double lt = log_trans_(i, j);
    return lt == kNegInf ? 0.0 : std::exp(lt) * duration(j).pmf(d);
  }

  /// Same kernel indexed by the previous segment's duration as well; the previous
  /// duration's mass is already carried by the forward values, so it does not enter.
  [[nodiscard]] double duration_transition(int i, int /*previous_duration*/, int j, int d) const {
    return duration_transition(i, j, d);
  }

  [[nodiscard]] ForwardState empty_state() const { return {}; }

  /// One-step prediction: every hypothesis at t+1 with its predictive density.
  [[nodiscard]] PredictedState predict(const ForwardState& s) const {
    PredictedState out;
    out.time_index = s.time_index;
    out.log_evidence = s.log_evidence;
    out.window_rows = s.window_rows;
    out.window_masks = s.window_masks;
    const int a = model_.num_states;
    // Mass of segments ending at t, routed into new segments at t+1.
    std::vector<double> start(static_cast<std::size_t>(a), kNegInf);
    if (s.time_index == 0) {
      for (int j = 0; j < a; ++j) start[static_cast<std::size_t>(j)] = log_pi_[j];
    } else {
      std::vector<std::vector<double>> terms(static_cast<std::size_t>(a));
      for (const auto& h : s.hypotheses) {
        const double end = h.log_start + h.log_b + duration(h.state).log_pmf(h.elapsed);
        if (end == kNegInf) continue;
        for (int j = 0; j < a; ++j) {
          if (log_trans_(h.state, j) != kNegInf) terms[static_cast<std::size_t>(j)].push_back(end + log_trans_(h.state, j));
        }
      }
      for (int j = 0; j < a; ++j) start[static_cast<std::size_t>(j)] = log_sum_exp(terms[static_cast<std::size_t>(j)]);
    }
    for (const auto& h : s.hypotheses) {
      const int e = h.elapsed + 1;
      const double ls = duration(h.state).log_survival(e);
      if (ls == kNegInf) continue;
      Candidate c;
      c.state = h.state;
      c.elapsed = e;
      c.log_start = h.log_start;
      c.log_b = h.log_b;
      c.log_weight = h.log_start + h.log_b + ls;
      if (cfg_.backend == EmissionBackend::StateSpace) {
        const auto& sp = spaces_[static_cast<std::size_t>(h.state)];
        c.x = sp.predict_mean(h.x);
        c.cov = sp.predict_cov(h.cov);
      }
      out.candidates.push_back(std::move(c));
    }
    for (int j = 0; j < a; ++j) {
      if (start[static_cast<std::size_t>(j)] == kNegInf) continue;
      Candidate c;
      c.state = j;
      c.elapsed = 1;
      c.log_start = start[static_cast<std::size_t>(j)];
      c.log_b = 0.0;
      c.log_weight = c.log_start;
      if (cfg_.backend == EmissionBackend::StateSpace) {
        const auto& sp = spaces_[static_cast<std::size_t>(j)];
        c.x = VectorXd::Zero(sp.dim());
        c.cov = sp.initial_cov();
      }
      out.candidates.push_back(std::move(c));
    }
    std::vector<double> w;
    w.reserve(out.candidates.size());
    for (const auto& c : out.candidates) w.push_back(c.log_weight);
    const double z = log_sum_exp(w);
    if (!std::isfinite(z)) fail(ErrorKind::FilterCollapse, "no hypothesis survives prediction");
    for (auto& c : out.candidates) {
      c.log_weight -= z;
      fill_predictive(c, out);
    }
    return out;
  }

  /// Absorbs y_{t+1} (entries with mask false are ignored) into a prediction.
  [[nodiscard]] ForwardState update(const PredictedState& pred, const VectorXd& row, const MaskVector& mask) const {
    check_row(row, mask);
    const auto o = observed_indices(mask);
    const VectorXd yo = select_entries(row, o);
    ForwardState out;
    out.time_index = pred.time_index + 1;
    out.window_rows = pred.window_rows;
    out.window_masks = pred.window_masks;
    out.window_rows.push_back(row);
    out.window_masks.push_back(mask);
    while (static_cast<int>(out.window_rows.size()) > model_.duration_cap) {
      out.window_rows.pop_front();
      out.window_masks.pop_front();
    }
    out.hypotheses.reserve(pred.candidates.size());
    std::vector<double> log_alpha;
    log_alpha.reserve(pred.candidates.size());
    for (const auto& c : pred.candidates) {
      Hypothesis h;
      h.state = c.state;
      h.elapsed = c.elapsed;
      h.log_start = c.log_start;
      double ll = 0.0;
      if (cfg_.backend == EmissionBackend::StateSpace) {
        h.x = c.x;
        h.cov = c.cov;
        if (!o.empty()) {
          const MatrixXd s = select_block(c.pred_cov, o, o);
          const auto llt = checked_llt(s, "predictive covariance");
          const VectorXd r = yo - select_entries(c.pred_mean, o);
          ll = gaussian_logpdf_centered(llt, r);
          MatrixXd g(c.cross.rows(), static_cast<Eigen::Index>(o.size()));
          for (std::size_t k = 0; k < o.size(); ++k) g.col(static_cast<Eigen::Index>(k)) = c.cross.col(o[k]);
          const MatrixXd gain = llt.solve(g.transpose()).transpose();
          h.x += gain * r;
          h.cov -= gain * g.transpose();
          h.cov = 0.5 * (h.cov + h.cov.transpose());
        }
        h.log_b = c.log_b + ll;
      } else {
        h.log_b = dense_window_loglik(c.state, c.elapsed, out);
      }
      const double la = c.log_weight + (h.log_b - c.log_b);
      log_alpha.push_back(la);
      out.hypotheses.push_back(std::move(h));
    }
    const double z = log_sum_exp(log_alpha);
    if (!std::isfinite(z)) {
      fail(ErrorKind::FilterCollapse, "observation at step " + std::to_string(out.time_index) +
                                          " has zero density under every hypothesis");
    }
    // log_alpha is relative to the normalized prediction, so z = log P(y_{t+1} | y_1..t).
    out.last_increment = z;
    out.log_evidence = pred.log_evidence + z;
    const double keep = *std::max_element(log_alpha.begin(), log_alpha.end()) - z - cfg_.prune_log_threshold;
    std::vector<Hypothesis> kept;
    kept.reserve(out.hypotheses.size());
    for (std::size_t k = 0; k < out.hypotheses.size(); ++k) {
      if (log_alpha[k] - z < keep) continue;
      auto& h = out.hypotheses[k];
      // Re-base so that the stored quantities give normalized forward values.
      h.log_start = log_alpha[k] - z - h.log_b - duration(h.state).log_survival(h.elapsed);
      kept.push_back(std::move(h));
    }
    out.hypotheses = std::move(kept);
    return out;
  }

  [[nodiscard]] ForwardState step(const ForwardState& s, const VectorXd& row, const MaskVector& mask) const {
    return update(predict(s), row, mask);
  }

  [[nodiscard]] ForwardState init(const VectorXd& row, const MaskVector& mask) const { return step(empty_state(), row, mask); }

  /// log α_t(j, e) on the A × D_max grid; −∞ where no hypothesis lives.
  [[nodiscard]] MatrixXd log_alpha_table(const ForwardState& s) const {
    MatrixXd t = MatrixXd::Constant(model_.num_states, model_.duration_cap, kNegInf);
    for (const auto& h : s.hypotheses) {
      t(h.state, h.elapsed - 1) = h.log_start + h.log_b + duration(h.state).log_survival(h.elapsed);
    }
    return t;
  }

  [[nodiscard]] VectorXd state_posterior(const ForwardState& s) const {
    std::vector<std::vector<double>> terms(static_cast<std::size_t>(model_.num_states));
    for (const auto& h : s.hypotheses) {
      terms[static_cast<std::size_t>(h.state)].push_back(h.log_start + h.log_b + duration(h.state).log_survival(h.elapsed));
    }
    VectorXd p(model_.num_states);
    for (int j = 0; j < model_.num_states; ++j) p[j] = std::exp(log_sum_exp(terms[static_cast<std::size_t>(j)]));
    return p / p.sum();
  }

  /// Mixture over the features of `group` for y_{t+1} given y_1..t.
  [[nodiscard]] PredictiveMixture mixture(const PredictedState& pred, std::span<const int> group,
                                          std::optional<double> prune = std::nullopt) const {
    if (group.empty()) fail(ErrorKind::InvalidInput, "feature group must be non-empty");
    std::vector<Eigen::Index> idx;
    for (int g : group) {
      if (g < 0 || g >= model_.num_features) fail(ErrorKind::InvalidInput, "feature index out of range");
      idx.push_back(g);
    }
    const double thr = prune.value_or(cfg_.prune_log_threshold);
    double best = kNegInf;
    for (const auto& c : pred.candidates) best = std::max(best, c.log_weight);
    PredictiveMixture mix;
    mix.group.assign(group.begin(), group.end());
    std::vector<double> w;
    for (const auto& c : pred.candidates) {
      if (c.log_weight < best - thr) continue;
      mix.components.push_back({c.state, c.elapsed, c.log_weight, select_entries(c.pred_mean, idx),
                                select_block(c.pred_cov, idx, idx)});
      w.push_back(c.log_weight);
    }
    const double z = log_sum_exp(w);
    for (auto& c : mix.components) c.log_weight -= z;
    return mix;
  }

 private:
  void check_row(const VectorXd& row, const MaskVector& mask) const {
    if (row.size() != model_.num_features || mask.size() != model_.num_features) {
      fail(ErrorKind::InvalidInput, "row must have " + std::to_string(model_.num_features) + " entries");
    }
    for (Eigen::Index p = 0; p < row.size(); ++p) {
      if (mask[p] && !std::isfinite(row[p])) fail(ErrorKind::InvalidInput, "observed entries must be finite");
    }
  }

  // Window of the last `elapsed` rows, oldest first.
  template <class State>
  static std::pair<MatrixXd, MaskMatrix> window_of(const State& s, int rows, Eigen::Index p) {
    MatrixXd w(rows, p);
    MaskMatrix m(rows, p);
    const auto n = static_cast<int>(s.window_rows.size());
    for (int r = 0; r < rows; ++r) {
      w.row(r) = s.window_rows[static_cast<std::size_t>(n - rows + r)].transpose();
      m.row(r) = s.window_masks[static_cast<std::size_t>(n - rows + r)].transpose();
    }
    // Unobserved entries are never read; clear possible NaN placeholders.
    for (Eigen::Index i = 0; i < w.size(); ++i)
      if (!m.data()[i]) w.data()[i] = 0.0;
    return {w, m};
  }

  double dense_window_loglik(int state, int elapsed, const ForwardState& s) const {
    auto [w, m] = window_of(s, elapsed, model_.num_features);
    return segment_emission_loglik(model_.emissions[static_cast<std::size_t>(state)], model_.noise, w, m);
  }

  void fill_predictive(Candidate& c, const PredictedState& pred) const {
    const auto& e = model_.emissions[static_cast<std::size_t>(c.state)];
    if (cfg_.backend == EmissionBackend::StateSpace) {
      const auto& sp = spaces_[static_cast<std::size_t>(c.state)];
      c.cross = sp.right_observe_t(c.cov);
      c.pred_mean = e.mean + sp.observe(c.x);
      c.pred_cov = sp.left_observe(c.cross);
      c.pred_cov = 0.5 * (c.pred_cov + c.pred_cov.transpose());
      c.pred_cov.diagonal() += model_.noise.variances();
      return;
    }
    if (c.elapsed == 1) {
      c.pred_mean = e.mean;
      c.pred_cov = prior_cov_[static_cast<std::size_t>(c.state)];
      return;
    }
    auto [w, m] = window_of(pred, c.elapsed - 1, model_.num_features);
    const auto obs = observed_entries(w, m);
    std::vector<ProcessPoint> q;
    for (int p = 0; p < model_.num_features; ++p) q.push_back({static_cast<double>(c.elapsed - 1), p});
    const auto post = conditional_gaussian(e, model_.noise, obs, q, true);
    c.pred_mean = post.mean;
    c.pred_cov = post.covariance;
  }

  SwitchingGPModel model_;
  FilterConfig cfg_;
  std::vector<DurationPmf> pmfs_;
  MatrixXd log_trans_;
  VectorXd log_pi_;
  std::vector<IcmStateSpace> spaces_;
  std::vector<MatrixXd> prior_cov_;
};

/// Most probable current state; exact ties go to the lowest index.
inline int map_state(const VectorXd& posterior) {
  int best = 0;
  for (int j = 1; j < posterior.size(); ++j)
    if (posterior[j] > posterior[best]) best = j;
  return best;
}

inline ForwardState forward_init(const SemiMarkovFilter& f, const VectorXd& row, const MaskVector& mask) {
  return f.init(row, mask);
}

inline ForwardState forward_step(const SemiMarkovFilter& f, const ForwardState& s, const VectorXd& row,
                                 const MaskVector& mask) {
  return f.step(s, row, mask);
}

inline PredictiveMixture predictive_mixture(const SemiMarkovFilter& f, const ForwardState& s, std::span<const int> group) {
  return f.mixture(f.predict(s), group);
}

/// Draws one vector from a mixture: a component by weight, then a Gaussian draw.
inline VectorXd sample_mixture(const PredictiveMixture& mix, std::mt19937_64& rng) {
  std::vector<double> w;
  for (const auto& c : mix.components) w.push_back(std::exp(c.log_weight));
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  const auto& c = mix.components[pick(rng)];
  std::normal_distribution<double> normal;
  const VectorXd z = VectorXd::NullaryExpr(c.mean.size(), [&] { return normal(rng); });
  return c.mean + checked_llt(c.cov, "mixture component").matrixL() * z;
}

struct FilterRun {
  std::vector<int> map_states;
  std::vector<VectorXd> posteriors;
  std::vector<double> increments;
  double log_evidence = 0.0;
};

/// Filters a whole series, recording MAP state and posterior at every step.
inline FilterRun run_filter(const SemiMarkovFilter& f, const SegmentedSeries& series) {
  FilterRun run;
  ForwardState s = f.empty_state();
  for (Eigen::Index t = 0; t < series.length(); ++t) {
    const MaskVector mask = series.mask.size() ? MaskVector(series.mask.row(t).transpose())
                                               : MaskVector::Constant(series.observations.cols(), true);
    s = f.step(s, series.observations.row(t).transpose(), mask);
    run.posteriors.push_back(f.state_posterior(s));
    run.map_states.push_back(map_state(run.posteriors.back()));
    run.increments.push_back(s.last_increment);
  }
  run.log_evidence = s.log_evidence;
  return run;
}

}  // namespace sgpmon
