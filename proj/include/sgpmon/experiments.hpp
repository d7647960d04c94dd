#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <thread>
#include <functional>
#include <random>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sgpmon/filter.hpp"
#include "sgpmon/gp_predict.hpp"
#include "sgpmon/io.hpp"
#include "sgpmon/monitor.hpp"
#include "sgpmon/pca.hpp"
#include "sgpmon/synthetic.hpp"
#include "sgpmon/training.hpp"

namespace sgpmon {

struct ExperimentConfig {
  fs::path data_dir;
  /// Keep only the first n subjects of each split (file order).
  std::optional<int> max_subjects;
  bool split_sessions = false;
  int pca_components = 10;
  /// Scale principal components to unit variance.
  bool whiten = true;
  /// Fraction of each segment's steps that are observed in the trajectory task (1:4 → 0.2).
  double observed_ratio = 0.2;
  std::vector<double> lambdas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<int> group_sizes{4, 7, 10};
  int mc_samples = 50;
  std::uint64_t seed = 0;
  bool use_fft = false;
  std::optional<int> duration_cap;
  Smoothness smoothness = Smoothness::ThreeHalves;
  bool shared_temporal = false;
  /// Sweep workers; 0 uses every hardware thread.
  int threads = 0;

  void validate() const {
    if (!(observed_ratio > 0.0 && observed_ratio < 1.0)) fail(ErrorKind::InvalidInput, "observed ratio must lie in (0, 1)");
    if (lambdas.empty()) fail(ErrorKind::InvalidInput, "lambda grid must be non-empty");
    if (mc_samples < 1) fail(ErrorKind::InvalidInput, "MC sample count must be >= 1");
    if (max_subjects && *max_subjects < 1) fail(ErrorKind::InvalidInput, "subject subset must be >= 1");
  }
};

struct PreparedData {
  std::vector<SegmentedSeries> train;
  std::vector<SegmentedSeries> test;
  PcaProjection pca;
};

inline std::vector<SegmentedSeries> take_series(std::vector<HarSeries> in, std::optional<int> max_subjects) {
  std::vector<SegmentedSeries> out;
  std::vector<int> seen;
  for (auto& h : in) {
    if (std::find(seen.begin(), seen.end(), h.subject) == seen.end()) {
      if (max_subjects && static_cast<int>(seen.size()) >= *max_subjects) continue;
      seen.push_back(h.subject);
    }
    out.push_back(std::move(h.series));
  }
  return out;
}

/// Loads both published splits and projects them with a PCA fitted on the
/// training rows only.
inline PreparedData prepare_har(const ExperimentConfig& cfg) {
  PreparedData d;
  d.train = take_series(load_har(cfg.data_dir, "train", cfg.split_sessions), cfg.max_subjects);
  d.test = take_series(load_har(cfg.data_dir, "test", cfg.split_sessions), cfg.max_subjects);
  if (d.train.empty() || d.test.empty()) fail(ErrorKind::InsufficientData, "HAR split is empty");
  Eigen::Index rows = 0;
  for (const auto& s : d.train) rows += s.length();
  MatrixXd all(rows, d.train.front().observations.cols());
  rows = 0;
  for (const auto& s : d.train) {
    all.middleRows(rows, s.length()) = s.observations;
    rows += s.length();
  }
  d.pca = fit_pca(all, cfg.pca_components, cfg.whiten);
  for (auto* split : {&d.train, &d.test})
    for (auto& s : *split) s.observations = apply_pca(d.pca, s.observations);
  return d;
}

inline SwitchingGPModel model_skeleton(int states, int features, Smoothness nu) {
  SwitchingGPModel m;
  m.num_states = states;
  m.num_features = features;
  m.transitions = TransitionMatrix::uniform(states);
  for (int j = 0; j < states; ++j) {
    m.durations.emplace_back(1.0, 1.0);
    m.emissions.push_back({VectorXd::Zero(features), MaternKernel(1.0, 2.0, nu), TaskCovariance::identity(features)});
  }
  m.noise = NoiseModel(VectorXd::Ones(features));
  m.trained.assign(static_cast<std::size_t>(states), true);
  return m;
}

/// Durations, transitions and means, then kernel fitting from a moment-based start.
inline SwitchingGPModel train_model(const std::vector<SegmentedSeries>& data, int states, const ExperimentConfig& cfg,
                                    FitReport* report = nullptr) {
  if (data.empty()) fail(ErrorKind::InsufficientData, "no training series");
  FitConfig fc;
  fc.duration_cap = cfg.duration_cap;
  fc.skip_emissions = true;
  fc.emission.use_fft = cfg.use_fft;
  fc.emission.shared_temporal = cfg.shared_temporal;
  FitReport rep;
  auto m = fit(model_skeleton(states, static_cast<int>(data.front().observations.cols()), cfg.smoothness), data, fc, &rep);
  initialize_emissions(m, data);
  m = fit_emissions(data, m, fc.emission, &rep.emission);
  if (report) *report = std::move(rep);
  return m;
}

// ---------------------------------------------------------------------------
// Trajectory prediction with known states.

struct TrajectoryReport {
  TrajectoryMetrics overall{};
  /// Predicting the state mean for every held-out entry.
  TrajectoryMetrics baseline{};
  std::vector<std::optional<TrajectoryMetrics>> per_state;
};

/// Within each labeled segment every k-th step (k = round(1/ratio)) is observed
/// and the rest are held out; held-out entries are predicted by the segment's GP
/// posterior given the observed steps.
inline TrajectoryReport experiment_trajectory(const SwitchingGPModel& m, const std::vector<SegmentedSeries>& data,
                                              double observed_ratio) {
  if (!(observed_ratio > 0.0 && observed_ratio < 1.0)) fail(ErrorKind::InvalidInput, "observed ratio must lie in (0, 1)");
  const auto every = static_cast<Eigen::Index>(std::lround(1.0 / observed_ratio));
  const auto a = static_cast<std::size_t>(m.num_states);
  std::vector<double> se(a, 0.0), ae(a, 0.0), bse(a, 0.0), bae(a, 0.0);
  std::vector<Eigen::Index> count(a, 0);
  for (const auto& s : data) {
    if (!s.labeled()) fail(ErrorKind::InvalidInput, "trajectory experiment needs labeled series");
    for (const auto& seg : segment_series(s.labels)) {
      const auto& e = m.emissions[static_cast<std::size_t>(seg.state)];
      std::vector<ObservedEntry> obs;
      std::vector<ProcessPoint> query;
      std::vector<double> truth;
      for (Eigen::Index k = 0; k < seg.duration; ++k) {
        const Eigen::Index t = seg.start + k;
        for (int p = 0; p < m.num_features; ++p) {
          const bool seen = s.mask.size() == 0 || s.mask(t, p);
          if (k % every == 0) {
            if (seen) obs.push_back({static_cast<double>(k), p, s.observations(t, p)});
          } else if (seen) {
            query.push_back({static_cast<double>(k), p});
            truth.push_back(s.observations(t, p));
          }
        }
      }
      if (query.empty()) continue;
      const auto post = conditional_gaussian(e, m.noise, obs, query);
      const auto j = static_cast<std::size_t>(seg.state);
      for (std::size_t i = 0; i < query.size(); ++i) {
        const double d = post.mean[static_cast<Eigen::Index>(i)] - truth[i];
        const double b = e.mean[query[i].feature] - truth[i];
        se[j] += d * d;
        ae[j] += std::abs(d);
        bse[j] += b * b;
        bae[j] += std::abs(b);
      }
      count[j] += static_cast<Eigen::Index>(query.size());
    }
  }
  TrajectoryReport rep;
  double tse = 0, tae = 0, tbse = 0, tbae = 0;
  Eigen::Index n = 0;
  for (std::size_t j = 0; j < a; ++j) {
    tse += se[j];
    tae += ae[j];
    tbse += bse[j];
    tbae += bae[j];
    n += count[j];
    if (count[j] > 0) {
      const auto c = static_cast<double>(count[j]);
      rep.per_state.push_back(TrajectoryMetrics{se[j] / c, ae[j] / c, count[j]});
    } else {
      rep.per_state.emplace_back();
    }
  }
  if (n == 0) fail(ErrorKind::UndefinedMetric, "no held-out entries to score");
  const auto dn = static_cast<double>(n);
  rep.overall = {tse / dn, tae / dn, n};
  rep.baseline = {tbse / dn, tbae / dn, n};
  return rep;
}

// ---------------------------------------------------------------------------
// Recognition by forward filtering.

struct RecognitionReport {
  double accuracy = 0.0;
  Eigen::Index steps = 0;
  Eigen::MatrixXi confusion;  // rows: true state, cols: MAP state
  /// Mean steps from a true switch until the MAP state first equals the new label.
  double mean_switch_lag = 0.0;
  Eigen::Index switches = 0;
  Eigen::Index switches_missed = 0;
  std::vector<FilterRun> runs;
};

inline RecognitionReport experiment_recognition(const SemiMarkovFilter& f, const std::vector<SegmentedSeries>& data) {
  const int a = f.model().num_states;
  RecognitionReport rep;
  rep.confusion = Eigen::MatrixXi::Zero(a, a);
  Eigen::Index correct = 0;
  double lag = 0.0;
  for (const auto& s : data) {
    if (!s.labeled()) fail(ErrorKind::InvalidInput, "recognition experiment needs labeled series");
    auto run = run_filter(f, s);
    for (std::size_t t = 0; t < s.labels.size(); ++t) {
      ++rep.confusion(s.labels[t], run.map_states[t]);
      correct += run.map_states[t] == s.labels[t];
    }
    rep.steps += s.length();
    const auto segs = segment_series(s.labels);
    for (std::size_t k = 1; k < segs.size(); ++k) {
      ++rep.switches;
      bool hit = false;
      for (Eigen::Index d = 0; d < segs[k].duration; ++d) {
        if (run.map_states[static_cast<std::size_t>(segs[k].start + d)] == segs[k].state) {
          lag += static_cast<double>(d);
          hit = true;
          break;
        }
      }
      rep.switches_missed += hit ? 0 : 1;
    }
    rep.runs.push_back(std::move(run));
  }
  if (rep.steps == 0) fail(ErrorKind::UndefinedMetric, "no steps to score");
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.steps);
  const auto detected = rep.switches - rep.switches_missed;
  rep.mean_switch_lag = detected > 0 ? lag / static_cast<double>(detected) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// λ sweep of the adaptive monitor.

struct SweepRow {
  double lambda = 0.0;
  double accuracy = 0.0;
  double avg_sensor_usage = 0.0;
  double avg_entropy = 0.0;
  double runtime_s = 0.0;
  /// Chosen catalog index per step, streams concatenated.
  std::vector<std::size_t> decisions;
};

/// One row per λ. Rows are independent and run on up to `cfg.threads` workers;
/// results do not depend on the worker count.
inline std::vector<SweepRow> experiment_sweep(const SemiMarkovFilter& f, const std::vector<SegmentedSeries>& data,
                                              const ExperimentConfig& cfg,
                                              const std::function<void(const SweepRow&)>& on_row = {}) {
  cfg.validate();
  auto one = [&](double lambda) {
    const auto cat = GroupCatalog::subsets_of_sizes(f.model().num_features, cfg.group_sizes, lambda);
    SweepRow row;
    row.lambda = lambda;
    double correct = 0, usage = 0, ent = 0;
    Eigen::Index steps = 0;
    for (std::size_t k = 0; k < data.size(); ++k) {
      MonitorConfig mc;
      mc.mc_samples = cfg.mc_samples;
      mc.seed = cfg.seed + 1000003ULL * k;
      const auto run = run_adaptive(f, data[k], cat, mc, false);
      const auto n = static_cast<double>(run.summary.steps);
      correct += static_cast<double>(run.summary.correct);
      usage += run.summary.avg_sensor_usage * n;
      ent += run.summary.avg_entropy * n;
      steps += run.summary.steps;
      row.runtime_s += run.summary.runtime_s;
      for (const auto& r : run.records) row.decisions.push_back(r.chosen);
    }
    const auto n = static_cast<double>(std::max<Eigen::Index>(steps, 1));
    row.accuracy = correct / n;
    row.avg_sensor_usage = usage / n;
    row.avg_entropy = ent / n;
    return row;
  };
  std::vector<SweepRow> rows(cfg.lambdas.size());
  const std::size_t workers = std::clamp<std::size_t>(
      cfg.threads > 0 ? static_cast<std::size_t>(cfg.threads) : std::thread::hardware_concurrency(), 1,
      cfg.lambdas.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  std::exception_ptr failure;
  auto work = [&] {
    for (std::size_t i; (i = next++) < rows.size();) {
      try {
        rows[i] = one(cfg.lambdas[i]);
        if (on_row) {
          const std::lock_guard lock(report);
          on_row(rows[i]);
        }
      } catch (...) {
        const std::lock_guard lock(report);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

inline constexpr const char* kSweepHeader = "lambda,accuracy,avg_sensor_usage,avg_entropy,runtime_s";

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepHeader << '\n' << std::setprecision(17);
  for (const auto& r : rows)
    out << r.lambda << ',' << r.accuracy << ',' << r.avg_sensor_usage << ',' << r.avg_entropy << ',' << r.runtime_s
        << '\n';
}

/// The qualitative trade-off checks: usage non-increasing in λ within `usage_slack`,
/// and accuracy at the smallest λ not below accuracy at the largest minus `acc_slack`.
struct TradeoffCheck {
  bool usage_monotone = true;
  bool accuracy_ok = true;
};

inline TradeoffCheck check_tradeoff(std::vector<SweepRow> rows, double usage_slack = 0.05, double acc_slack = 0.02) {
  TradeoffCheck c;
  if (rows.empty()) return c;
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.lambda < b.lambda; });
  double lowest = rows.front().avg_sensor_usage;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].avg_sensor_usage > lowest + usage_slack) c.usage_monotone = false;
    lowest = std::min(lowest, rows[i].avg_sensor_usage);
  }
  c.accuracy_ok = rows.front().accuracy >= rows.back().accuracy - acc_slack;
  return c;
}

// ---------------------------------------------------------------------------
// Synthetic stand-in with the HAR file layout.

/// Six activities over ten whitened features; states 1 and 2 have short bouts.
inline SwitchingGPModel demo_model(std::uint64_t seed = 2024) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const int a = 6, p = 10;
  SwitchingGPModel m = model_skeleton(a, p, Smoothness::ThreeHalves);
  const double shape[a] = {12.0, 6.0, 6.0, 14.0, 16.0, 18.0};
  const double scale[a] = {2.5, 2.0, 2.0, 3.0, 3.0, 3.0};
  MatrixXd task = MatrixXd::Identity(p, p);
  for (Eigen::Index r = 1; r < p; ++r)
    for (Eigen::Index c = 0; c < r; ++c) task(r, c) = 0.15 * normal(rng);
  task = task * task.transpose();
  const TaskCovariance shared = TaskCovariance::from_matrix(task / task(0, 0));
  for (int j = 0; j < a; ++j) {
    m.durations[static_cast<std::size_t>(j)] = GammaDuration(shape[j], scale[j]);
    VectorXd mu = VectorXd::NullaryExpr(p, [&] { return 0.4 * normal(rng); });
    // Feature importance decays with the component index, as after PCA.
    for (Eigen::Index q = 0; q < p; ++q) mu[q] *= 2.0 / (1.0 + 0.25 * static_cast<double>(q));
    m.emissions[static_cast<std::size_t>(j)] = {mu, MaternKernel(0.3 + 0.05 * j, 3.0 + 0.5 * j, Smoothness::ThreeHalves),
                                                shared};
  }
  MatrixXd t = MatrixXd::Zero(a, a);
  for (int i = 0; i < a; ++i) {
    for (int j = 0; j < a; ++j)
      if (i != j) t(i, j) = 0.5 + std::abs(normal(rng));
    t.row(i) /= t.row(i).sum();
    t(i, i == 0 ? 1 : 0) += 1.0 - t.row(i).sum();
  }
  m.transitions = TransitionMatrix(t);
  m.noise = NoiseModel(VectorXd::Constant(p, 0.35));
  m.duration_cap = 120;
  return m;
}

struct HarFixtureConfig {
  int train_subjects = 6;
  int test_subjects = 3;
  Eigen::Index steps_per_subject = 300;
  Eigen::Index raw_dim = 40;
  double raw_noise = 0.05;
  std::uint64_t seed = 1;
};

/// Samples each subject's stream from `m`, lifts it to `raw_dim` features through a
/// fixed random linear map plus isotropic noise, and writes train/ and test/
/// directories in the HAR layout (labels 1-based).
inline void write_har_fixture(const fs::path& dir, const SwitchingGPModel& m, const HarFixtureConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  const MatrixXd lift = MatrixXd::NullaryExpr(m.num_features, cfg.raw_dim, [&] { return normal(rng); });
  int subject = 1;
  for (const auto& [split, count] : {std::pair<std::string, int>{"train", cfg.train_subjects}, {"test", cfg.test_subjects}}) {
    const fs::path d = dir / split;
    fs::create_directories(d);
    std::ofstream x(d / ("X_" + split + ".txt")), y(d / ("y_" + split + ".txt")), s(d / ("subject_" + split + ".txt"));
    if (!x || !y || !s) fail(ErrorKind::Format, "cannot write fixture under " + d.string());
    x << std::setprecision(17);
    for (int k = 0; k < count; ++k, ++subject) {
      const auto series = generate_synthetic(m, cfg.steps_per_subject, rng(), std::to_string(subject));
      const MatrixXd raw = series.observations * lift +
                           cfg.raw_noise * MatrixXd::NullaryExpr(series.length(), cfg.raw_dim, [&] { return normal(rng); });
      for (Eigen::Index t = 0; t < series.length(); ++t) {
        for (Eigen::Index c = 0; c < raw.cols(); ++c) x << (c ? " " : "") << raw(t, c);
        x << '\n';
        y << series.labels[static_cast<std::size_t>(t)] + 1 << '\n';
        s << subject << '\n';
      }
    }
  }
}

}  // namespace sgpmon
