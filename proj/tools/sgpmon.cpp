// sgpmon command-line front end. See README.md for the file formats.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgpmon/experiments.hpp"

using namespace sgpmon;
using json = nlohmann::json;

namespace {

struct Options {
  std::string data_dir;
  std::string model;
  std::string out;
  std::string input;
  double lambda = 0.1;
  std::vector<double> lambdas;
  int mc_samples = 50;
  std::uint64_t seed = 0;
  bool use_fft = false;
  int dmax = 0;
  std::vector<int> groups{4, 7, 10};
  int subjects = 0;
  bool split_sessions = false;
  bool no_whiten = false;
  int components = 10;
  double ratio = 0.2;
  double smoothness = 1.5;
  bool shared_temporal = false;
  long length = 1000;
  bool demo = false;
  bool har_layout = false;
  int fixture_train = 6;
  int fixture_test = 3;
  std::vector<long> lengths{256, 512, 1024, 2048, 4096};
  int features = 10;
  long exact_limit = 1024;
  std::string backend = "state-space";
  int threads = 0;
};

ExperimentConfig experiment_config(const Options& o) {
  ExperimentConfig c;
  c.data_dir = o.data_dir;
  if (o.subjects > 0) c.max_subjects = o.subjects;
  c.split_sessions = o.split_sessions;
  c.pca_components = o.components;
  c.whiten = !o.no_whiten;
  c.observed_ratio = o.ratio;
  if (!o.lambdas.empty()) c.lambdas = o.lambdas;
  c.group_sizes = o.groups;
  c.mc_samples = o.mc_samples;
  c.seed = o.seed;
  c.use_fft = o.use_fft;
  if (o.dmax > 0) c.duration_cap = o.dmax;
  if (o.smoothness == 0.5) c.smoothness = Smoothness::Half;
  else if (o.smoothness == 1.5) c.smoothness = Smoothness::ThreeHalves;
  else if (o.smoothness == 2.5) c.smoothness = Smoothness::FiveHalves;
  else fail(ErrorKind::InvalidInput, "--smoothness must be 0.5, 1.5 or 2.5");
  c.shared_temporal = o.shared_temporal;
  c.threads = o.threads;
  c.validate();
  return c;
}

json config_json(const ExperimentConfig& c) {
  return {{"data_dir", c.data_dir.string()},
          {"subjects", c.max_subjects ? json(*c.max_subjects) : json(nullptr)},
          {"split_sessions", c.split_sessions},
          {"pca_components", c.pca_components},
          {"whiten", c.whiten},
          {"observed_ratio", c.observed_ratio},
          {"lambdas", c.lambdas},
          {"group_sizes", c.group_sizes},
          {"mc_samples", c.mc_samples},
          {"seed", c.seed},
          {"use_fft", c.use_fft},
          {"dmax", c.duration_cap ? json(*c.duration_cap) : json(nullptr)},
          {"smoothness", smoothness_value(c.smoothness)},
          {"shared_temporal", c.shared_temporal}};
}

json metrics_json(const TrajectoryMetrics& m) { return {{"mse", m.mse}, {"abs", m.abs}, {"count", m.count}}; }

std::vector<double> to_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void require(const std::string& value, const char* flag) {
  if (value.empty()) fail(ErrorKind::InvalidInput, std::string(flag) + " is required");
}

/// Test split projected with the model's own PCA (never refitted on test data).
std::vector<SegmentedSeries> load_test(const Options& o, const SwitchingGPModel& m) {
  require(o.data_dir, "--data-dir");
  auto cfg = experiment_config(o);
  auto test = take_series(load_har(cfg.data_dir, "test", cfg.split_sessions), cfg.max_subjects);
  if (test.empty()) fail(ErrorKind::InsufficientData, "test split is empty");
  for (auto& s : test) {
    if (m.pca) s.observations = apply_pca(*m.pca, s.observations);
    if (s.observations.cols() != m.num_features) {
      fail(ErrorKind::InvalidInput, "test features do not match the model (" + std::to_string(s.observations.cols()) +
                                        " vs " + std::to_string(m.num_features) + ")");
    }
  }
  return test;
}

FilterConfig filter_config(const Options& o) {
  FilterConfig fc;
  if (o.backend == "dense") fc.backend = EmissionBackend::Dense;
  else if (o.backend != "state-space") fail(ErrorKind::InvalidInput, "--backend must be state-space or dense");
  return fc;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Format, "cannot write " + path);
  return out;
}

// ---------------------------------------------------------------------------

json cmd_train(const Options& o) {
  require(o.data_dir, "--data-dir");
  require(o.out, "--out");
  const auto cfg = experiment_config(o);
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = prepare_har(cfg);
  FitReport rep;
  auto model = train_model(data.train, kHarActivities, cfg, &rep);
  model.pca = data.pca;
  save_model(o.out, model);
  std::vector<double> shapes, scales;
  for (const auto& d : model.durations) {
    shapes.push_back(d.shape());
    scales.push_back(d.scale());
  }
  return {{"command", "train"},
          {"config", config_json(cfg)},
          {"model", o.out},
          {"train_series", data.train.size()},
          {"duration_shape", shapes},
          {"duration_scale", scales},
          {"dmax", model.duration_cap},
          {"initial_objective", rep.emission.initial_objective},
          {"final_objective", rep.emission.final_objective},
          {"iterations", rep.emission.iterations},
          {"converged", rep.emission.converged},
          {"warnings", rep.warnings},
          {"runtime_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
}

json cmd_predict(const Options& o) {
  require(o.model, "--model");
  const auto m = load_model(o.model);
  const auto test = load_test(o, m);
  const auto rep = experiment_trajectory(m, test, o.ratio);
  json per = json::array();
  for (std::size_t j = 0; j < rep.per_state.size(); ++j) {
    per.push_back(rep.per_state[j] ? metrics_json(*rep.per_state[j]) : json(nullptr));
  }
  if (!o.out.empty()) {
    auto out = open_out(o.out);
    out << "activity,mse,abs,count\n" << std::setprecision(17);
    for (std::size_t j = 0; j < rep.per_state.size(); ++j)
      if (rep.per_state[j]) out << j + 1 << ',' << rep.per_state[j]->mse << ',' << rep.per_state[j]->abs << ',' << rep.per_state[j]->count << '\n';
    out << "all," << rep.overall.mse << ',' << rep.overall.abs << ',' << rep.overall.count << '\n';
  }
  return {{"command", "predict"},
          {"observed_ratio", o.ratio},
          {"overall", metrics_json(rep.overall)},
          {"state_mean_baseline", metrics_json(rep.baseline)},
          {"per_activity", per},
          {"reference", {{"mse", 0.3852}, {"abs", 0.4235}}}};
}

/// Streaming mode: one input row per line (model's raw feature space); "nan"
/// marks a missing entry. Emits one JSON record per step.
void stream_filter(const Options& o, const SwitchingGPModel& m, std::istream& in, std::ostream& out) {
  const SemiMarkovFilter f(m, filter_config(o));
  ForwardState s = f.empty_state();
  const Eigen::Index width = m.pca ? m.pca->input_dim() : m.num_features;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<double> vals;
    std::string tok;
    while (ss >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size()) fail(ErrorKind::Format, "input line " + std::to_string(lineno) + ": bad value '" + tok + "'");
      vals.push_back(v);
    }
    if (vals.empty()) continue;
    if (static_cast<Eigen::Index>(vals.size()) != width) {
      fail(ErrorKind::Format, "input line " + std::to_string(lineno) + ": expected " + std::to_string(width) + " values");
    }
    VectorXd raw = Eigen::Map<const VectorXd>(vals.data(), width);
    VectorXd row;
    MaskVector mask;
    if (m.pca) {
      if (!raw.allFinite()) fail(ErrorKind::Format, "input line " + std::to_string(lineno) + ": missing values are not supported before PCA");
      row = apply_pca(*m.pca, raw.transpose()).transpose();
      mask = MaskVector::Constant(m.num_features, true);
    } else {
      mask = raw.array().isFinite();
      row = mask.select(raw, 0.0);
    }
    const double before = s.log_evidence;
    s = f.step(s, row, mask);
    const VectorXd post = f.state_posterior(s);
    out << json{{"t", s.time_index - 1},
                {"map_state", map_state(post) + 1},
                {"posterior", to_vec(post)},
                {"log_evidence_delta", s.log_evidence - before}}
                .dump()
        << '\n';
    out.flush();
  }
}

json cmd_filter(const Options& o) {
  require(o.model, "--model");
  const auto m = load_model(o.model);
  if (o.data_dir.empty()) {
    if (o.input.empty() || o.input == "-") {
      stream_filter(o, m, std::cin, std::cout);
    } else {
      std::ifstream in(o.input);
      if (!in) fail(ErrorKind::Format, "cannot open " + o.input);
      stream_filter(o, m, in, std::cout);
    }
    return nullptr;
  }
  const auto test = load_test(o, m);
  const auto rep = experiment_recognition(SemiMarkovFilter(m, filter_config(o)), test);
  if (!o.out.empty()) {
    auto out = open_out(o.out);
    out << "series,t,label,map_state";
    for (int j = 0; j < m.num_states; ++j) out << ",p" << j + 1;
    out << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < test.size(); ++k)
      for (std::size_t t = 0; t < test[k].labels.size(); ++t) {
        out << test[k].subject_id << ',' << t << ',' << test[k].labels[t] + 1 << ',' << rep.runs[k].map_states[t] + 1;
        for (Eigen::Index j = 0; j < m.num_states; ++j) out << ',' << rep.runs[k].posteriors[t][j];
        out << '\n';
      }
  }
  json conf = json::array();
  for (Eigen::Index i = 0; i < rep.confusion.rows(); ++i) {
    std::vector<int> row;
    for (Eigen::Index j = 0; j < rep.confusion.cols(); ++j) row.push_back(rep.confusion(i, j));
    conf.push_back(row);
  }
  return {{"command", "filter"},
          {"accuracy", rep.accuracy},
          {"steps", rep.steps},
          {"confusion", conf},
          {"switches", rep.switches},
          {"switches_missed", rep.switches_missed},
          {"mean_switch_lag", rep.mean_switch_lag},
          {"reference", {{"accuracy", 0.7421}}}};
}

json cmd_monitor(const Options& o) {
  require(o.model, "--model");
  const auto m = load_model(o.model);
  const auto test = load_test(o, m);
  const SemiMarkovFilter f(m, filter_config(o));
  const auto cat = GroupCatalog::subsets_of_sizes(m.num_features, o.groups, o.lambda);
  std::ofstream out;
  if (!o.out.empty()) {
    out = open_out(o.out);
    out << "series,t,label,map_state,group,group_size,loss,entropy,std_error,mc_samples\n" << std::setprecision(17);
  }
  double correct = 0, usage = 0, ent = 0, runtime = 0;
  Eigen::Index steps = 0;
  for (std::size_t k = 0; k < test.size(); ++k) {
    MonitorConfig mc;
    mc.mc_samples = o.mc_samples;
    mc.seed = o.seed + 1000003ULL * k;
    const auto run = run_adaptive(f, test[k], cat, mc);
    const auto n = static_cast<double>(run.summary.steps);
    correct += static_cast<double>(run.summary.correct);
    usage += run.summary.avg_sensor_usage * n;
    ent += run.summary.avg_entropy * n;
    runtime += run.summary.runtime_s;
    steps += run.summary.steps;
    if (out.is_open()) {
      for (std::size_t t = 0; t < run.records.size(); ++t) {
        const auto& r = run.records[t];
        std::string g;
        for (int q : cat.group(r.chosen)) g += (g.empty() ? "" : ";") + std::to_string(q + 1);
        out << test[k].subject_id << ',' << t << ',' << test[k].labels[t] + 1 << ',' << run.map_states[t] + 1 << ','
            << g << ',' << cat.group(r.chosen).size() << ',' << r.losses[r.chosen] << ',' << r.entropy[r.chosen] << ','
            << r.std_error[r.chosen] << ',' << r.mc_samples << '\n';
      }
    }
  }
  const auto n = static_cast<double>(std::max<Eigen::Index>(steps, 1));
  return {{"command", "monitor"},
          {"lambda", o.lambda},
          {"groups", cat.size()},
          {"mc_samples", o.mc_samples},
          {"seed", o.seed},
          {"accuracy", correct / n},
          {"avg_sensor_usage", usage / n},
          {"avg_entropy", ent / n},
          {"runtime_s", runtime},
          {"reference", {{"lambda", 0.1}, {"accuracy", 0.7926}, {"avg_sensor_usage", 0.7342}}}};
}

json cmd_sweep(const Options& o) {
  require(o.model, "--model");
  const auto m = load_model(o.model);
  const auto test = load_test(o, m);
  const auto cfg = experiment_config(o);
  const SemiMarkovFilter f(m, filter_config(o));
  const auto rows = experiment_sweep(f, test, cfg, [](const SweepRow& r) {
    std::cerr << "lambda " << r.lambda << ": accuracy " << r.accuracy << ", usage " << r.avg_sensor_usage << " ("
              << r.runtime_s << " s)\n";
  });
  if (!o.out.empty()) {
    auto out = open_out(o.out);
    write_sweep_csv(out, rows);
  }
  const auto check = check_tradeoff(rows);
  json table = json::array();
  for (const auto& r : rows)
    table.push_back({{"lambda", r.lambda},
                     {"accuracy", r.accuracy},
                     {"avg_sensor_usage", r.avg_sensor_usage},
                     {"avg_entropy", r.avg_entropy},
                     {"runtime_s", r.runtime_s}});
  return {{"command", "sweep"},
          {"config", config_json(cfg)},
          {"rows", table},
          {"usage_non_increasing", check.usage_monotone},
          {"accuracy_tradeoff_ok", check.accuracy_ok},
          {"reference", {{"lambda", 0.1}, {"accuracy", 0.7926}, {"avg_sensor_usage", 0.7342}}}};
}

json cmd_simulate(const Options& o) {
  require(o.out, "--out");
  SwitchingGPModel m;
  if (o.demo) m = demo_model();
  else if (!o.model.empty()) m = load_model(o.model);
  else fail(ErrorKind::InvalidInput, "simulate needs --model or --demo");
  if (o.har_layout) {
    HarFixtureConfig fx;
    fx.train_subjects = o.fixture_train;
    fx.test_subjects = o.fixture_test;
    fx.steps_per_subject = o.length;
    fx.seed = o.seed;
    write_har_fixture(o.out, m, fx);
    return {{"command", "simulate"}, {"layout", "har"}, {"dir", o.out}, {"steps_per_subject", o.length}};
  }
  const auto s = generate_synthetic(m, o.length, o.seed);
  write_matrix(o.out + ".X.txt", s.observations);
  auto y = open_out(o.out + ".y.txt");
  for (int l : s.labels) y << l + 1 << '\n';
  return {{"command", "simulate"}, {"observations", o.out + ".X.txt"}, {"labels", o.out + ".y.txt"}, {"length", o.length}};
}

json cmd_pca(const Options& o) {
  require(o.data_dir, "--data-dir");
  const auto cfg = experiment_config(o);
  const auto train = take_series(load_har(cfg.data_dir, "train", cfg.split_sessions), cfg.max_subjects);
  Eigen::Index rows = 0;
  for (const auto& s : train) rows += s.length();
  if (train.empty()) fail(ErrorKind::InsufficientData, "train split is empty");
  MatrixXd all(rows, train.front().observations.cols());
  rows = 0;
  for (const auto& s : train) {
    all.middleRows(rows, s.length()) = s.observations;
    rows += s.length();
  }
  const auto p = fit_pca(all, cfg.pca_components, cfg.whiten);
  if (!o.out.empty()) write_matrix(o.out, p.components);
  return {{"command", "pca"},
          {"rows", all.rows()},
          {"input_dim", p.input_dim()},
          {"explained_variance", to_vec(p.explained_variance)},
          {"components_file", o.out}};
}

json cmd_bench_fft(const Options& o) {
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal;
  const auto p = static_cast<Eigen::Index>(o.features);
  MatrixXd l = MatrixXd::Identity(p, p);
  for (Eigen::Index r = 1; r < p; ++r)
    for (Eigen::Index c = 0; c < r; ++c) l(r, c) = 0.2 * normal(rng);
  const MatrixXd task = l * l.transpose();
  const VectorXd noise = VectorXd::Constant(p, 0.3);
  std::ofstream out;
  if (!o.out.empty()) {
    out = open_out(o.out);
    out << "T,P,fft_s,exact_s,relative_difference\n" << std::setprecision(17);
  }
  json rows = json::array();
  for (long t : o.lengths) {
    const MaternKernel k(1.0, std::max(1.0, static_cast<double>(t) / 64.0));
    const MatrixXd r = MatrixXd::NullaryExpr(t, p, [&] { return normal(rng); });
    auto t0 = std::chrono::steady_clock::now();
    const double fast = fast_segment_loglik(k, task, noise, r).loglik;
    const double fast_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json row = {{"T", t}, {"P", p}, {"fft_s", fast_s}, {"fft_loglik", fast}};
    double exact_s = std::numeric_limits<double>::quiet_NaN(), rel = exact_s;
    if (t <= o.exact_limit) {
      t0 = std::chrono::steady_clock::now();
      const auto te = temporal_eigen(k, t);
      const double exact = -segment_nll_exact(k, TaskCovariance::from_matrix(task).cholesky_factor(), noise, r, te, nullptr);
      exact_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rel = std::abs(fast - exact) / std::abs(exact);
      row["exact_s"] = exact_s;
      row["relative_difference"] = rel;
    }
    if (out.is_open()) out << t << ',' << p << ',' << fast_s << ',' << exact_s << ',' << rel << '\n';
    rows.push_back(row);
  }
  return {{"command", "bench-fft"}, {"rows", rows}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Switching Gaussian-process activity models with adaptive sensor selection"};
  app.require_subcommand(1);
  Options o;

  auto data_flags = [&](CLI::App* c) {
    c->add_option("--data-dir", o.data_dir, "HAR-layout directory (train/, test/)");
    c->add_option("--subjects", o.subjects, "keep only the first N subjects of each split");
    c->add_flag("--split-sessions", o.split_sessions, "treat non-adjacent runs of a subject as separate series");
  };
  auto monitor_flags = [&](CLI::App* c) {
    c->add_option("--mc-samples", o.mc_samples, "Monte-Carlo samples per step")->check(CLI::PositiveNumber);
    c->add_option("--seed", o.seed, "random seed");
    c->add_option("--groups", o.groups, "group sizes of the catalog")->delimiter(',');
  };

  auto* train = app.add_subcommand("train", "fit a model on the training split");
  data_flags(train);
  train->add_option("--out", o.out, "model file to write");
  train->add_flag("--use-fft", o.use_fft, "FFT likelihood during kernel fitting");
  train->add_option("--dmax", o.dmax, "duration cap override");
  train->add_option("--components", o.components, "principal components");
  train->add_flag("--no-whiten", o.no_whiten, "keep raw principal-component scale");
  train->add_option("--smoothness", o.smoothness, "Matern smoothness (0.5, 1.5, 2.5)");
  train->add_flag("--shared-temporal", o.shared_temporal, "one temporal kernel for all activities");

  auto* predict = app.add_subcommand("predict", "known-state trajectory prediction on the test split");
  data_flags(predict);
  predict->add_option("--model", o.model, "model file");
  predict->add_option("--ratio", o.ratio, "observed fraction of each segment");
  predict->add_option("--out", o.out, "per-activity CSV");

  auto* filter = app.add_subcommand("filter", "forward filtering (test split, or streaming rows)");
  data_flags(filter);
  filter->add_option("--model", o.model, "model file");
  filter->add_option("--input", o.input, "row file for streaming mode ('-' = stdin)");
  filter->add_option("--backend", o.backend, "state-space or dense");
  filter->add_option("--out", o.out, "per-step CSV");

  auto* monitor = app.add_subcommand("monitor", "adaptive sensor-group selection at one lambda");
  data_flags(monitor);
  monitor_flags(monitor);
  monitor->add_option("--model", o.model, "model file");
  monitor->add_option("--lambda", o.lambda, "energy cost of the full sensor set");
  monitor->add_option("--out", o.out, "per-step selection CSV");

  auto* sweep = app.add_subcommand("sweep", "lambda sweep of the adaptive monitor");
  data_flags(sweep);
  monitor_flags(sweep);
  sweep->add_option("--model", o.model, "model file");
  sweep->add_option("--lambda", o.lambdas, "lambda grid")->delimiter(',');
  sweep->add_option("--out", o.out, "sweep CSV");
  sweep->add_option("--threads", o.threads, "parallel lambda workers (0 = all cores)");

  auto* simulate = app.add_subcommand("simulate", "sample synthetic data from a model");
  simulate->add_option("--model", o.model, "model file");
  simulate->add_flag("--demo", o.demo, "use the built-in six-activity demo model");
  simulate->add_option("--length", o.length, "steps (per subject with --har-layout)");
  simulate->add_option("--seed", o.seed, "random seed");
  simulate->add_flag("--har-layout", o.har_layout, "write a HAR-layout directory at --out");
  simulate->add_option("--train-subjects", o.fixture_train);
  simulate->add_option("--test-subjects", o.fixture_test);
  simulate->add_option("--out", o.out, "output prefix or directory");

  auto* pca = app.add_subcommand("pca", "fit PCA on the training split");
  data_flags(pca);
  pca->add_option("--components", o.components, "principal components");
  pca->add_flag("--no-whiten", o.no_whiten, "report unwhitened projection");
  pca->add_option("--out", o.out, "component matrix file");

  auto* bench = app.add_subcommand("bench-fft", "time the FFT likelihood against the exact path");
  bench->add_option("--lengths", o.lengths, "segment lengths")->delimiter(',');
  bench->add_option("--features", o.features, "feature count");
  bench->add_option("--exact-limit", o.exact_limit, "largest T evaluated exactly");
  bench->add_option("--seed", o.seed, "random seed");
  bench->add_option("--out", o.out, "CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  }

  try {
    json result;
    if (*train) result = cmd_train(o);
    else if (*predict) result = cmd_predict(o);
    else if (*filter) result = cmd_filter(o);
    else if (*monitor) result = cmd_monitor(o);
    else if (*sweep) result = cmd_sweep(o);
    else if (*simulate) result = cmd_simulate(o);
    else if (*pca) result = cmd_pca(o);
    else if (*bench) result = cmd_bench_fft(o);
    if (!result.is_null()) std::cout << result.dump(2) << '\n';
    return 0;
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
}
