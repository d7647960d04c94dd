#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "sgpmon/model.hpp"

namespace sgpmon {

namespace detail {

inline int draw_index(std::mt19937_64& rng, const VectorXd& weights) {
  std::discrete_distribution<int> dist(weights.data(), weights.data() + weights.size());
  return dist(rng);
}

inline VectorXd start_distribution(const SwitchingGPModel& m) {
  VectorXd pi = m.initial.size() ? m.initial : VectorXd::Ones(m.num_states);
  for (int j = 0; j < m.num_states; ++j) {
    if (!m.trained[static_cast<std::size_t>(j)]) pi[j] = 0.0;
  }
  if (!(pi.sum() > 0)) fail(ErrorKind::InvalidInput, "no trained state has initial mass");
  return pi / pi.sum();
}

}  // namespace detail

/// Draws a label sequence of length T from the semi-Markov chain: durations from
/// the discretized Gamma law on 1..D_max, jumps from the transition matrix
/// restricted to trained states. Labels are 0-based.
inline std::vector<int> sample_labels(const SwitchingGPModel& m, Eigen::Index length, std::mt19937_64& rng) {
  m.validate();
  const auto pmfs = m.duration_pmfs();
  std::vector<VectorXd> dur_weights;
  for (const auto& p : pmfs) {
    VectorXd w(p.cap());
    for (int d = 1; d <= p.cap(); ++d) w[d - 1] = p.pmf(d);
    dur_weights.push_back(std::move(w));
  }
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(length));
  int state = detail::draw_index(rng, detail::start_distribution(m));
  while (static_cast<Eigen::Index>(labels.size()) < length) {
    const int d = 1 + detail::draw_index(rng, dur_weights[static_cast<std::size_t>(state)]);
    for (int k = 0; k < d && static_cast<Eigen::Index>(labels.size()) < length; ++k) labels.push_back(state);
    if (m.num_states == 1) continue;
    VectorXd row = m.transitions.probs().row(state).transpose();
    for (int j = 0; j < m.num_states; ++j) {
      if (!m.trained[static_cast<std::size_t>(j)]) row[j] = 0.0;
    }
    if (!(row.sum() > 0)) fail(ErrorKind::InvalidInput, "state " + std::to_string(state + 1) + " has no trained successor");
    state = detail::draw_index(rng, row);
  }
  return labels;
}

/// Samples observations for a fixed label sequence: each maximal segment is an
/// independent draw from its state's GP (K^Y ⊗ K^T) plus white noise.
inline MatrixXd sample_observations(const SwitchingGPModel& m, const std::vector<int>& labels, std::mt19937_64& rng) {
  const auto p = static_cast<Eigen::Index>(m.num_features);
  MatrixXd out(static_cast<Eigen::Index>(labels.size()), p);
  std::normal_distribution<double> normal;
  std::map<std::pair<int, Eigen::Index>, MatrixXd> temporal_factors;
  const VectorXd noise_sd = m.noise.variances().cwiseSqrt();
  for (const auto& seg : segment_series(labels)) {
    const auto& e = m.emissions[static_cast<std::size_t>(seg.state)];
    const auto key = std::make_pair(seg.state, seg.duration);
    auto it = temporal_factors.find(key);
    if (it == temporal_factors.end()) {
      MatrixXd g = gram_matrix(e.temporal, seg.duration - 1);
      add_gram_jitter(g, e.temporal.variance());
      it = temporal_factors.emplace(key, MatrixXd(checked_llt(g, "temporal Gram").matrixL())).first;
    }
    const MatrixXd z = MatrixXd::NullaryExpr(seg.duration, p, [&] { return normal(rng); });
    MatrixXd block = it->second * z * e.task.cholesky_factor().transpose();
    for (Eigen::Index t = 0; t < seg.duration; ++t) {
      for (Eigen::Index q = 0; q < p; ++q) block(t, q) += e.mean[q] + noise_sd[q] * normal(rng);
    }
    out.middleRows(seg.start, seg.duration) = block;
  }
  return out;
}

/// A labeled, fully observed series drawn from the model; deterministic per seed.
inline SegmentedSeries generate_synthetic(const SwitchingGPModel& m, Eigen::Index length, std::uint64_t seed,
                                          const std::string& subject_id = "synthetic") {
  if (length < 1) fail(ErrorKind::InvalidInput, "synthetic series length must be >= 1");
  std::mt19937_64 rng(seed);
  auto labels = sample_labels(m, length, rng);
  MatrixXd obs = sample_observations(m, labels, rng);
  return SegmentedSeries::fully_observed_series(std::move(obs), std::move(labels), subject_id);
}

}  // namespace sgpmon
