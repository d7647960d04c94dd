#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sgpmon/filter.hpp"

namespace sgpmon {

/// Shannon entropy in nats; 0·log 0 = 0.
inline double entropy(const VectorXd& dist) {
  if ((dist.array() < 0.0).any() || std::abs(dist.sum() - 1.0) > 1e-9) {
    fail(ErrorKind::InvalidInput, "entropy needs a probability vector");
  }
  double h = 0.0;
  for (Eigen::Index i = 0; i < dist.size(); ++i)
    if (dist[i] > 0.0) h -= dist[i] * std::log(dist[i]);
  return std::max(h, 0.0);
}

/// Candidate feature groups with their per-step costs.
class GroupCatalog {
 public:
  GroupCatalog() = default;

  GroupCatalog(std::vector<std::vector<int>> groups, std::vector<double> costs, int num_features)
      : groups_(std::move(groups)), costs_(std::move(costs)), num_features_(num_features) {
    if (groups_.empty()) fail(ErrorKind::InvalidInput, "group catalog must be non-empty");
    if (groups_.size() != costs_.size()) fail(ErrorKind::InvalidInput, "one cost per group is required");
    for (auto& g : groups_) {
      std::sort(g.begin(), g.end());
      if (g.empty()) fail(ErrorKind::InvalidInput, "feature groups must be non-empty");
      if (std::adjacent_find(g.begin(), g.end()) != g.end()) fail(ErrorKind::InvalidInput, "repeated feature in group");
      if (g.front() < 0 || g.back() >= num_features) fail(ErrorKind::InvalidInput, "feature index out of range");
    }
    for (double c : costs_)
      if (!(c >= 0.0)) fail(ErrorKind::InvalidInput, "group costs must be >= 0");
    subsets_.resize(groups_.size());
    for (std::size_t a = 0; a < groups_.size(); ++a)
      for (std::size_t b = 0; b < groups_.size(); ++b)
        if (a != b && std::includes(groups_[a].begin(), groups_[a].end(), groups_[b].begin(), groups_[b].end())) {
          subsets_[a].push_back(b);
        }
  }

  /// Every subset of {0..P-1} whose size is listed, cost λ·|m|/P, in lexicographic order.
  static GroupCatalog subsets_of_sizes(int num_features, std::vector<int> sizes, double lambda) {
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    std::vector<std::vector<int>> groups;
    std::vector<double> costs;
    for (int k : sizes) {
      if (k < 1 || k > num_features) fail(ErrorKind::InvalidInput, "group size " + std::to_string(k) + " out of range");
      std::vector<bool> pick(static_cast<std::size_t>(num_features), false);
      std::fill(pick.begin(), pick.begin() + k, true);
      do {
        std::vector<int> g;
        for (int i = 0; i < num_features; ++i)
          if (pick[static_cast<std::size_t>(i)]) g.push_back(i);
        groups.push_back(std::move(g));
        costs.push_back(lambda * k / num_features);
      } while (std::prev_permutation(pick.begin(), pick.end()));
    }
    return GroupCatalog(std::move(groups), std::move(costs), num_features);
  }

  [[nodiscard]] std::size_t size() const { return groups_.size(); }
  [[nodiscard]] const std::vector<int>& group(std::size_t i) const { return groups_[i]; }
  [[nodiscard]] double cost(std::size_t i) const { return costs_[i]; }
  [[nodiscard]] int num_features() const { return num_features_; }
  /// Catalog indices of the proper subsets of group i.
  [[nodiscard]] const std::vector<std::size_t>& subsets(std::size_t i) const { return subsets_[i]; }

 private:
  std::vector<std::vector<int>> groups_;
  std::vector<double> costs_;
  int num_features_ = 0;
  std::vector<std::vector<std::size_t>> subsets_;
};

struct EntropyEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo estimator of E[H(state | y_1..t, y^m_{t+1})] under the one-step
/// predictive. One set of full-dimensional draws is shared by every group
/// (common random numbers); restricting a draw to m gives a draw of y^m.
class EntropyEvaluator {
 public:
  /// Components whose log weight falls more than `log_threshold` below the
  /// largest are dropped (default: the filter's pruning threshold).
  EntropyEvaluator(const SemiMarkovFilter& filter, const PredictedState& pred, int num_samples, std::uint64_t seed,
                   std::optional<double> log_threshold = std::nullopt)
      : num_states_(filter.model().num_states) {
    if (num_samples < 1) fail(ErrorKind::InvalidInput, "MC sample count must be >= 1");
    double best = kNegInf;
    for (const auto& c : pred.candidates) best = std::max(best, c.log_weight);
    const double keep = best - log_threshold.value_or(filter.config().prune_log_threshold);
    std::vector<double> w;
    for (const auto& c : pred.candidates) {
      if (c.log_weight < keep) continue;
      comps_.push_back(&c);
      w.push_back(c.log_weight);
    }
    const double z = log_sum_exp(w);
    log_w_.resize(static_cast<Eigen::Index>(w.size()));
    for (std::size_t i = 0; i < w.size(); ++i) log_w_[static_cast<Eigen::Index>(i)] = w[i] - z;

    const Eigen::Index p = filter.model().num_features;
    std::mt19937_64 rng(seed);
    std::vector<double> probs(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) probs[i] = std::exp(log_w_[static_cast<Eigen::Index>(i)]);
    std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
    std::normal_distribution<double> normal;
    std::vector<std::size_t> which(static_cast<std::size_t>(num_samples));
    for (auto& k : which) k = pick(rng);
    samples_.resize(p, num_samples);
    std::vector<std::optional<MatrixXd>> factors(comps_.size());
    for (int i = 0; i < num_samples; ++i) {
      const std::size_t k = which[static_cast<std::size_t>(i)];
      if (!factors[k]) factors[k] = MatrixXd(checked_llt(comps_[k]->pred_cov, "predictive covariance").matrixL());
      const VectorXd zv = VectorXd::NullaryExpr(p, [&] { return normal(rng); });
      samples_.col(i) = comps_[k]->pred_mean + *factors[k] * zv;
    }
  }

  [[nodiscard]] int num_samples() const { return static_cast<int>(samples_.cols()); }
  [[nodiscard]] std::size_t num_components() const { return comps_.size(); }

  [[nodiscard]] EntropyEstimate evaluate(std::span<const int> group) const {
    std::vector<Eigen::Index> idx(group.begin(), group.end());
    const auto m = static_cast<Eigen::Index>(idx.size());
    const Eigen::Index n = samples_.cols();
    const MatrixXd ym = samples_(idx, Eigen::all);
    // log w_c + log N(y_i^m; μ_c, S_c), components × samples.
    MatrixXd ll(static_cast<Eigen::Index>(comps_.size()), n);
    MatrixXd cov(m, m), r(m, n);
    for (std::size_t c = 0; c < comps_.size(); ++c) {
      cov = comps_[c]->pred_cov(idx, idx);
      const Eigen::LLT<Eigen::Ref<MatrixXd>> llt(cov);
      const auto diag = cov.diagonal();
      if (llt.info() != Eigen::Success || !(diag.minCoeff() > 0.0)) {
        fail(ErrorKind::NonPositiveDefinite, "covariance is not positive definite: predictive covariance");
      }
      const double logdet = 2.0 * diag.array().log().sum();
      r = ym.colwise() - comps_[c]->pred_mean(idx);
      // Forward substitution row by row; small sizes, no temporaries.
      for (Eigen::Index i = 0; i < m; ++i) {
        if (i > 0) r.row(i).noalias() -= cov.row(i).head(i) * r.topRows(i);
        r.row(i) /= cov(i, i);
      }
      ll.row(static_cast<Eigen::Index>(c)) =
          (log_w_[static_cast<Eigen::Index>(c)] - 0.5 * (logdet + static_cast<double>(m) * kLog2Pi)) -
          0.5 * r.colwise().squaredNorm().array();
    }
    VectorXd h(n);
    VectorXd pr(num_states_);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double top = ll.col(i).maxCoeff();
      pr.setZero();
      for (std::size_t c = 0; c < comps_.size(); ++c)
        pr[comps_[c]->state] += std::exp(ll(static_cast<Eigen::Index>(c), i) - top);
      const double z = pr.sum();
      double hi = 0.0;
      for (Eigen::Index j = 0; j < num_states_; ++j)
        if (pr[j] > 0.0) hi -= (pr[j] / z) * std::log(pr[j] / z);
      h[i] = std::max(hi, 0.0);
    }
    EntropyEstimate out;
    out.estimate = h.mean();
    out.std_error = n > 1 ? std::sqrt((h.array() - out.estimate).square().sum() / static_cast<double>(n - 1) /
                                      static_cast<double>(n))
                          : 0.0;
    return out;
  }

 private:
  int num_states_;
  std::vector<const Candidate*> comps_;
  VectorXd log_w_;
  MatrixXd samples_;  // features × samples
};

inline EntropyEstimate expected_entropy_mc(const SemiMarkovFilter& filter, const ForwardState& state,
                                           std::span<const int> group, int num_samples, std::uint64_t seed) {
  const auto pred = filter.predict(state);
  return EntropyEvaluator(filter, pred, num_samples, seed).evaluate(group);
}

struct SelectionRecord {
  Eigen::Index time = 0;
  std::size_t chosen = 0;
  std::vector<double> losses;
  std::vector<double> entropy;    // after the monotone correction
  std::vector<double> std_error;
  int mc_samples = 0;
};

struct MonitorConfig {
  int mc_samples = 50;
  std::uint64_t seed = 0;
  /// Replace each group's estimate by the minimum over its catalog subsets.
  bool monotone_correction = true;
  /// Mixture components lighter than exp(-threshold) relative to the heaviest are
  /// ignored by the estimator.
  double component_log_threshold = 12.0;
};

/// Strict ordering of candidates: lower loss, then lower cost, then larger group,
/// then lexicographic feature list.
inline bool better_choice(const GroupCatalog& cat, const std::vector<double>& loss, std::size_t a, std::size_t b) {
  if (loss[a] != loss[b]) return loss[a] < loss[b];
  if (cat.cost(a) != cat.cost(b)) return cat.cost(a) < cat.cost(b);
  if (cat.group(a).size() != cat.group(b).size()) return cat.group(a).size() > cat.group(b).size();
  return cat.group(a) < cat.group(b);
}

inline std::uint64_t step_seed(std::uint64_t seed, Eigen::Index t) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(static_cast<std::uint64_t>(t) >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/// Loss of every catalog group for the step after `pred`, and the minimizer.
inline SelectionRecord select_group(const SemiMarkovFilter& filter, const PredictedState& pred,
                                    const GroupCatalog& cat, const MonitorConfig& cfg) {
  if (cat.size() == 0) fail(ErrorKind::InvalidInput, "group catalog must be non-empty");
  if (cat.num_features() != filter.model().num_features) {
    fail(ErrorKind::InvalidInput, "catalog feature count does not match the model");
  }
  SelectionRecord rec;
  rec.time = pred.time_index;
  rec.mc_samples = cfg.mc_samples;
  const EntropyEvaluator eval(filter, pred, cfg.mc_samples, step_seed(cfg.seed, pred.time_index),
                              cfg.component_log_threshold);
  rec.entropy.resize(cat.size());
  rec.std_error.resize(cat.size());
  for (std::size_t g = 0; g < cat.size(); ++g) {
    const auto est = eval.evaluate(cat.group(g));
    rec.entropy[g] = est.estimate;
    rec.std_error[g] = est.std_error;
  }
  if (cfg.monotone_correction) {
    const auto raw = rec.entropy;
    for (std::size_t g = 0; g < cat.size(); ++g)
      for (std::size_t s : cat.subsets(g)) rec.entropy[g] = std::min(rec.entropy[g], raw[s]);
  }
  rec.losses.resize(cat.size());
  for (std::size_t g = 0; g < cat.size(); ++g) rec.losses[g] = rec.entropy[g] + cat.cost(g);
  rec.chosen = 0;
  for (std::size_t g = 1; g < cat.size(); ++g)
    if (better_choice(cat, rec.losses, g, rec.chosen)) rec.chosen = g;
  return rec;
}

inline SelectionRecord select_group(const SemiMarkovFilter& filter, const ForwardState& state, const GroupCatalog& cat,
                                    const MonitorConfig& cfg) {
  return select_group(filter, filter.predict(state), cat, cfg);
}

inline double loss(const SemiMarkovFilter& filter, const ForwardState& state, std::span<const int> group, double cost,
                   int num_samples, std::uint64_t seed) {
  return expected_entropy_mc(filter, state, group, num_samples, seed).estimate + cost;
}

struct AdaptiveSummary {
  double accuracy = 0.0;
  double avg_sensor_usage = 0.0;
  double avg_entropy = 0.0;
  double runtime_s = 0.0;
  Eigen::Index steps = 0;
  Eigen::Index correct = 0;
};

struct AdaptiveRun {
  std::vector<SelectionRecord> records;
  std::vector<int> map_states;
  std::vector<VectorXd> posteriors;
  AdaptiveSummary summary;
};

/// Closed loop: choose a group, observe only its features, update, score the MAP state.
inline AdaptiveRun run_adaptive(const SemiMarkovFilter& filter, const SegmentedSeries& stream, const GroupCatalog& cat,
                                const MonitorConfig& cfg, bool keep_records = true) {
  if (!stream.labeled()) fail(ErrorKind::InvalidInput, "adaptive run needs a labeled stream for scoring");
  const auto t0 = std::chrono::steady_clock::now();
  const Eigen::Index p = filter.model().num_features;
  AdaptiveRun run;
  ForwardState state = filter.empty_state();
  double usage = 0.0, ent = 0.0;
  for (Eigen::Index t = 0; t < stream.length(); ++t) {
    const auto pred = filter.predict(state);
    auto rec = select_group(filter, pred, cat, cfg);
    MaskVector mask = MaskVector::Constant(p, false);
    for (int f : cat.group(rec.chosen)) mask[f] = stream.mask.size() == 0 || stream.mask(t, f);
    usage += static_cast<double>(cat.group(rec.chosen).size()) / static_cast<double>(p);
    state = filter.update(pred, stream.observations.row(t).transpose(), mask);
    const VectorXd post = filter.state_posterior(state);
    ent += entropy(post);
    const int map = map_state(post);
    run.map_states.push_back(map);
    run.summary.correct += map == stream.labels[static_cast<std::size_t>(t)];
    if (keep_records) {
      run.posteriors.push_back(post);
      run.records.push_back(std::move(rec));
    } else {
      rec.losses.clear();
      rec.entropy.clear();
      rec.std_error.clear();
      run.records.push_back(std::move(rec));
    }
  }
  const auto n = static_cast<double>(std::max<Eigen::Index>(stream.length(), 1));
  run.summary.steps = stream.length();
  run.summary.accuracy = static_cast<double>(run.summary.correct) / n;
  run.summary.avg_sensor_usage = usage / n;
  run.summary.avg_entropy = ent / n;
  run.summary.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

}  // namespace sgpmon
