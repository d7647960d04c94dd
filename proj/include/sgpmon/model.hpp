#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "sgpmon/kernels.hpp"
#include "sgpmon/numeric.hpp"
#include "sgpmon/pca.hpp"

namespace sgpmon {

/// Gamma sojourn-time distribution, shape k and scale β (time steps).
class GammaDuration {
 public:
  GammaDuration(double shape, double scale) : shape_(shape), scale_(scale) {
    if (!(shape > 0.0) || !(scale > 0.0) || !std::isfinite(shape * scale)) {
      fail(ErrorKind::InvalidInput, "Gamma duration needs positive finite shape and scale");
    }
  }

  [[nodiscard]] double shape() const { return shape_; }
  [[nodiscard]] double scale() const { return scale_; }
  [[nodiscard]] double mean() const { return shape_ * scale_; }

  [[nodiscard]] double cdf(double x) const {
    return x <= 0.0 ? 0.0 : boost::math::gamma_p(shape_, x / scale_);
  }
  [[nodiscard]] double quantile(double q) const {
    return boost::math::quantile(boost::math::gamma_distribution<double>(shape_, scale_), q);
  }

 private:
  double shape_;
  double scale_;
};

/// Discretized duration law on 1..D_max. Step d collects the Gamma mass of
/// [d-½, d+½) (step 1 also takes [0, ½)); the law is truncated at D_max and
/// renormalized.
class DurationPmf {
 public:
  DurationPmf(const GammaDuration& g, int duration_cap) : pmf_(static_cast<std::size_t>(duration_cap)) {
    if (duration_cap < 1) fail(ErrorKind::InvalidInput, "duration cap must be >= 1");
    double prev = 0.0;
    for (int d = 1; d <= duration_cap; ++d) {
      const double next = g.cdf(d + 0.5);
      pmf_[static_cast<std::size_t>(d - 1)] = next - prev;
      prev = next;
    }
    double total = prev;
    if (!(total > 0.0)) {
      // All mass lies beyond the cap; fall back to a point mass at D_max.
      std::fill(pmf_.begin(), pmf_.end(), 0.0);
      pmf_.back() = 1.0;
      total = 1.0;
    }
    for (auto& p : pmf_) p /= total;
    survival_.assign(pmf_.size() + 1, 0.0);
    for (int d = duration_cap; d >= 1; --d) {
      survival_[static_cast<std::size_t>(d - 1)] = survival_[static_cast<std::size_t>(d)] + pmf_[static_cast<std::size_t>(d - 1)];
    }
    log_pmf_.resize(pmf_.size());
    log_survival_.resize(survival_.size());
    for (std::size_t i = 0; i < pmf_.size(); ++i) log_pmf_[i] = pmf_[i] > 0 ? std::log(pmf_[i]) : kNegInf;
    for (std::size_t i = 0; i < survival_.size(); ++i) {
      log_survival_[i] = survival_[i] > 0 ? std::log(survival_[i]) : kNegInf;
    }
  }

  [[nodiscard]] int cap() const { return static_cast<int>(pmf_.size()); }
  /// P(duration == d), d in 1..cap.
  [[nodiscard]] double pmf(int d) const { return in_range(d) ? pmf_[static_cast<std::size_t>(d - 1)] : 0.0; }
  [[nodiscard]] double log_pmf(int d) const { return in_range(d) ? log_pmf_[static_cast<std::size_t>(d - 1)] : kNegInf; }
  /// P(duration >= d); 1 at d=1, 0 beyond the cap.
  [[nodiscard]] double survival(int d) const {
    if (d <= 1) return 1.0;
    return d > cap() ? 0.0 : survival_[static_cast<std::size_t>(d - 1)];
  }
  [[nodiscard]] double log_survival(int d) const {
    if (d <= 1) return 0.0;
    return d > cap() ? kNegInf : log_survival_[static_cast<std::size_t>(d - 1)];
  }

 private:
  [[nodiscard]] bool in_range(int d) const { return d >= 1 && d <= cap(); }

  std::vector<double> pmf_;
  std::vector<double> survival_;
  std::vector<double> log_pmf_;
  std::vector<double> log_survival_;
};

/// Approximate maximum-likelihood Gamma fit from observed durations.
inline GammaDuration fit_duration_gamma(std::span<const double> durations) {
  if (durations.size() < 2) {
    fail(ErrorKind::InsufficientData, "Gamma fit needs at least two durations, got " + std::to_string(durations.size()));
  }
  double sum = 0.0, sum_log = 0.0;
  for (double s : durations) {
    if (!(s > 0.0)) fail(ErrorKind::InvalidInput, "durations must be positive");
    sum += s;
    sum_log += std::log(s);
  }
  const double n = static_cast<double>(durations.size());
  const double mean = sum / n;
  // v = log(mean s) - mean(log s): zero iff all durations are equal.
  const double v = std::log(mean) - sum_log / n;
  if (!(v > 1e-14)) fail(ErrorKind::DegenerateDuration, "all durations are equal; Gamma shape is unbounded");
  const double shape = (3.0 - v + std::sqrt((v - 3.0) * (v - 3.0) + 24.0 * v)) / (12.0 * v);
  return GammaDuration(shape, mean / shape);
}

inline GammaDuration fit_duration_gamma(const std::vector<double>& durations) {
  return fit_duration_gamma(std::span<const double>(durations));
}

/// Row-stochastic jump matrix of the semi-Markov chain. Self-transitions are zero
/// (dwell time lives in the durations) except for the single-state chain, [[1]].
class TransitionMatrix {
 public:
  explicit TransitionMatrix(MatrixXd probs) : probs_(std::move(probs)) {
    const Eigen::Index a = probs_.rows();
    if (a == 0 || probs_.cols() != a) fail(ErrorKind::InvalidInput, "transition matrix must be square and non-empty");
    for (Eigen::Index i = 0; i < a; ++i) {
      if ((probs_.row(i).array() < 0.0).any()) fail(ErrorKind::InvalidInput, "transition probabilities must be >= 0");
      if (std::abs(probs_.row(i).sum() - 1.0) > 1e-12) {
        fail(ErrorKind::InvalidInput, "transition row " + std::to_string(i) + " does not sum to 1");
      }
      if (a > 1 && probs_(i, i) != 0.0) fail(ErrorKind::InvalidInput, "transition matrix diagonal must be zero");
    }
  }

  static TransitionMatrix uniform(Eigen::Index a) {
    if (a == 1) return TransitionMatrix(MatrixXd::Ones(1, 1));
    MatrixXd p = MatrixXd::Constant(a, a, 1.0 / static_cast<double>(a - 1));
    p.diagonal().setZero();
    return TransitionMatrix(p);
  }

  [[nodiscard]] const MatrixXd& probs() const { return probs_; }
  [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return probs_(i, j); }
  [[nodiscard]] Eigen::Index size() const { return probs_.rows(); }

 private:
  MatrixXd probs_;
};

/// Per-activity emission GP: constant mean, temporal Matérn kernel, task covariance.
struct StateEmission {
  VectorXd mean;
  MaternKernel temporal;
  TaskCovariance task;
};

/// Full parameter set of the switching GP model. States are 0-based internally;
/// external files use 1-based activity labels.
struct SwitchingGPModel {
  int num_states = 0;
  int num_features = 0;
  std::vector<GammaDuration> durations;
  TransitionMatrix transitions = TransitionMatrix::uniform(1);
  std::vector<StateEmission> emissions;
  NoiseModel noise = NoiseModel(VectorXd::Ones(1));
  int duration_cap = 1;
  /// States absent from training data are flagged and excluded from filtering.
  std::vector<bool> trained;
  /// Initial state distribution; empty means uniform over trained states.
  VectorXd initial;
  /// Training parametrization: one task covariance shared by every state.
  bool shared_task = true;
  std::optional<PcaProjection> pca;

  void validate() const {
    if (num_states < 1 || num_features < 1) fail(ErrorKind::InvalidInput, "model needs >= 1 state and feature");
    const auto a = static_cast<std::size_t>(num_states);
    if (durations.size() != a || emissions.size() != a || trained.size() != a ||
        transitions.size() != num_states) {
      fail(ErrorKind::InvalidInput, "model parameter arrays do not match the state count");
    }
    if (noise.size() != num_features) fail(ErrorKind::InvalidInput, "noise size does not match feature count");
    for (const auto& e : emissions) {
      if (e.mean.size() != num_features || e.task.size() != num_features) {
        fail(ErrorKind::InvalidInput, "emission dimensions do not match feature count");
      }
    }
    if (duration_cap < 1) fail(ErrorKind::InvalidInput, "duration cap must be >= 1");
    if (initial.size() != 0 && initial.size() != num_states) {
      fail(ErrorKind::InvalidInput, "initial distribution size does not match state count");
    }
  }

  [[nodiscard]] std::vector<DurationPmf> duration_pmfs() const {
    std::vector<DurationPmf> out;
    out.reserve(durations.size());
    for (const auto& g : durations) out.emplace_back(g, duration_cap);
    return out;
  }
};

/// Uniformly sampled multivariate observations with optional labels and an
/// observed-entry mask. Labels are 0-based state indices.
struct SegmentedSeries {
  MatrixXd observations;  // T × P
  std::vector<int> labels;
  MaskMatrix mask;        // T × P, true = observed
  std::string subject_id;
  double step = 1.0;

  [[nodiscard]] Eigen::Index length() const { return observations.rows(); }
  [[nodiscard]] bool labeled() const { return !labels.empty(); }
  [[nodiscard]] bool fully_observed() const { return mask.size() == 0 || mask.all(); }

  static SegmentedSeries fully_observed_series(MatrixXd obs, std::vector<int> labels, std::string id = {}) {
    SegmentedSeries s;
    s.mask = MaskMatrix::Constant(obs.rows(), obs.cols(), true);
    s.observations = std::move(obs);
    s.labels = std::move(labels);
    s.subject_id = std::move(id);
    return s;
  }
};

struct Segment {
  int state;
  Eigen::Index start;
  Eigen::Index duration;

  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Run-length encodes a label sequence into maximal constant segments.
inline std::vector<Segment> segment_series(std::span<const int> labels) {
  std::vector<Segment> out;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (out.empty() || out.back().state != labels[t]) {
      out.push_back({labels[t], static_cast<Eigen::Index>(t), 1});
    } else {
      ++out.back().duration;
    }
  }
  return out;
}

inline std::vector<Segment> segment_series(const std::vector<int>& labels) {
  return segment_series(std::span<const int>(labels));
}

struct TransitionFit {
  TransitionMatrix matrix;
  std::vector<std::string> warnings;
};

/// Counts consecutive-segment transitions across all sequences. Rows of states
/// with no outgoing transition are backfilled uniformly and reported.
inline TransitionFit fit_transitions(const std::vector<std::vector<Segment>>& sequences, int num_states) {
  if (num_states < 1) fail(ErrorKind::InvalidInput, "fit_transitions needs num_states >= 1");
  if (num_states == 1) return {TransitionMatrix(MatrixXd::Ones(1, 1)), {}};
  MatrixXd counts = MatrixXd::Zero(num_states, num_states);
  for (const auto& seq : sequences) {
    for (std::size_t n = 0; n + 1 < seq.size(); ++n) {
      const int i = seq[n].state, j = seq[n + 1].state;
      if (i < 0 || j < 0 || i >= num_states || j >= num_states) {
        fail(ErrorKind::InvalidInput, "segment state outside 0.." + std::to_string(num_states - 1));
      }
      if (i != j) counts(i, j) += 1.0;
    }
  }
  std::vector<std::string> warnings;
  MatrixXd probs(num_states, num_states);
  for (int i = 0; i < num_states; ++i) {
    const double total = counts.row(i).sum();
    if (total > 0.0) {
      probs.row(i) = counts.row(i) / total;
    } else {
      probs.row(i).setConstant(1.0 / (num_states - 1));
      warnings.push_back("state " + std::to_string(i + 1) +
                         " has no outgoing transitions; row backfilled uniformly");
    }
    probs(i, i) = 0.0;
    // Exact stochasticity: push the rounding residue into the largest entry.
    Eigen::Index arg = 0;
    probs.row(i).maxCoeff(&arg);
    probs(i, arg) += 1.0 - probs.row(i).sum();
  }
  return {TransitionMatrix(probs), std::move(warnings)};
}

}  // namespace sgpmon
