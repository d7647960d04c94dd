#pragma once

#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sgpmon/model.hpp"

namespace sgpmon {

namespace fs = std::filesystem;

/// Whitespace-delimited decimal matrix, one row per non-blank line.
inline MatrixXd read_matrix(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Format, "cannot open " + path.string());
  std::vector<double> values;
  Eigen::Index cols = -1, rows = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const char* p = line.c_str();
    Eigen::Index n = 0;
    for (;;) {
      while (*p == ' ' || *p == '\t' || *p == '\r') ++p;
      if (*p == '\0') break;
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(p, &end);
      if (end == p || errno == ERANGE) {
        fail(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": not a number");
      }
      values.push_back(v);
      ++n;
      p = end;
    }
    if (n == 0) continue;
    if (cols < 0) cols = n;
    if (n != cols) {
      fail(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                                  " columns, found " + std::to_string(n));
    }
    ++rows;
  }
  if (rows == 0) return MatrixXd(0, 0);
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), rows,
                                                                                                    cols);
}

inline void write_matrix(const fs::path& path, const MatrixXd& m) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Format, "cannot write " + path.string());
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
    out << '\n';
  }
}

/// Integer column vector (labels, subject ids).
inline std::vector<int> read_int_column(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Format, "cannot open " + path.string());
  std::vector<int> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    long v = 0;
    if (!(ss >> v)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      fail(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": not an integer");
    }
    std::string rest;
    if (ss >> rest) fail(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": expected one value");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// HAR layout: <dir>/<split>/X_<split>.txt (rows × features), y_<split>.txt
// (activity 1..6), subject_<split>.txt (subject id per row).

struct HarSeries {
  SegmentedSeries series;  // labels are 0-based states
  int subject = 0;
};

inline constexpr int kHarActivities = 6;

/// Groups rows by subject. By default all of a subject's rows are concatenated in
/// file order; with `split_sessions` a subject's non-adjacent row runs become
/// separate series.
inline std::vector<HarSeries> load_har_files(const fs::path& x_path, const fs::path& y_path,
                                             const fs::path& subject_path, bool split_sessions = false) {
  const MatrixXd x = read_matrix(x_path);
  const auto y = read_int_column(y_path);
  const auto subj = read_int_column(subject_path);
  if (static_cast<std::size_t>(x.rows()) != y.size() || y.size() != subj.size()) {
    fail(ErrorKind::Format, "row count mismatch: " + std::to_string(x.rows()) + " feature rows, " +
                                std::to_string(y.size()) + " labels, " + std::to_string(subj.size()) + " subject ids");
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 1 || y[i] > kHarActivities) {
      fail(ErrorKind::Format, y_path.string() + ":" + std::to_string(i + 1) + ": label " + std::to_string(y[i]) +
                                  " outside 1.." + std::to_string(kHarActivities));
    }
  }
  // Row runs: maximal blocks of adjacent rows with one subject id.
  std::vector<std::pair<int, std::vector<Eigen::Index>>> groups;
  std::map<int, std::size_t> by_subject;
  for (std::size_t i = 0; i < subj.size(); ++i) {
    const bool new_run = i == 0 || subj[i] != subj[i - 1];
    if (split_sessions) {
      if (new_run) groups.push_back({subj[i], {}});
      groups.back().second.push_back(static_cast<Eigen::Index>(i));
    } else {
      auto [it, inserted] = by_subject.try_emplace(subj[i], groups.size());
      if (inserted) groups.push_back({subj[i], {}});
      groups[it->second].second.push_back(static_cast<Eigen::Index>(i));
    }
  }
  std::vector<HarSeries> out;
  for (const auto& [s, rows] : groups) {
    HarSeries h;
    h.subject = s;
    h.series.observations.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      h.series.observations.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
      h.series.labels.push_back(y[static_cast<std::size_t>(rows[r])] - 1);
    }
    h.series.subject_id = std::to_string(s);
    out.push_back(std::move(h));
  }
  return out;
}

inline std::vector<HarSeries> load_har(const fs::path& dir, const std::string& split, bool split_sessions = false) {
  const fs::path d = fs::exists(dir / split) ? dir / split : dir;
  return load_har_files(d / ("X_" + split + ".txt"), d / ("y_" + split + ".txt"), d / ("subject_" + split + ".txt"),
                        split_sessions);
}

// ---------------------------------------------------------------------------
// Model file. Line-oriented "key values..." text; matrices are written as
// "key rows cols" followed by one line per row. Reals use 17 significant digits.
//
//   sgpmon-model 1
//   states A
//   features P
//   duration_cap D
//   shared_task 0|1
//   trained t_1 .. t_A
//   initial n v_1 .. v_n            (n = 0: uniform over trained states)
//   transitions A A  + A rows
//   state i                         (for i = 0..A-1)
//   duration shape scale
//   mean m_1 .. m_P
//   kernel nu variance lengthscale  (nu in {0.5, 1.5, 2.5})
//   task_factor P P + P rows        (lower-triangular Cholesky factor of K^Y)
//   noise s_1 .. s_P
//   pca 0 | pca k d whiten  then  pca_means d values, pca_variance k values,
//                                 pca_components k d + k rows
//   end

namespace detail {

inline void put_row(std::ostream& out, const VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << v[i];
  out << '\n';
}

inline void put_matrix(std::ostream& out, const std::string& key, const MatrixXd& m) {
  out << key << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
    out << '\n';
  }
}

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) fail(ErrorKind::Format, "model file ends early");
    return w;
  }
  void expect(const std::string& key) {
    const auto w = word();
    if (w != key) fail(ErrorKind::Format, "model file: expected '" + key + "', found '" + w + "'");
  }
  double real() {
    const auto w = word();
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    if (end != w.c_str() + w.size()) fail(ErrorKind::Format, "model file: bad number '" + w + "'");
    return v;
  }
  long integer() {
    const auto w = word();
    char* end = nullptr;
    const long v = std::strtol(w.c_str(), &end, 10);
    if (end != w.c_str() + w.size()) fail(ErrorKind::Format, "model file: bad integer '" + w + "'");
    return v;
  }
  VectorXd vector(Eigen::Index n) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = real();
    return v;
  }
  MatrixXd matrix(const std::string& key, Eigen::Index rows, Eigen::Index cols) {
    expect(key);
    if (integer() != rows || integer() != cols) fail(ErrorKind::Format, "model file: '" + key + "' has wrong shape");
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = real();
    return m;
  }

 private:
  std::istream& in_;
};

inline Smoothness smoothness_from(double nu) {
  if (nu == 0.5) return Smoothness::Half;
  if (nu == 1.5) return Smoothness::ThreeHalves;
  if (nu == 2.5) return Smoothness::FiveHalves;
  fail(ErrorKind::Format, "model file: unsupported smoothness " + std::to_string(nu));
}

}  // namespace detail

inline void write_model(std::ostream& out, const SwitchingGPModel& m) {
  m.validate();
  out << std::setprecision(17);
  out << "sgpmon-model 1\n";
  out << "states " << m.num_states << "\nfeatures " << m.num_features << "\nduration_cap " << m.duration_cap << '\n';
  out << "shared_task " << (m.shared_task ? 1 : 0) << "\ntrained";
  for (bool t : m.trained) out << ' ' << (t ? 1 : 0);
  out << "\ninitial " << m.initial.size();
  detail::put_row(out, m.initial);
  detail::put_matrix(out, "transitions", m.transitions.probs());
  for (int j = 0; j < m.num_states; ++j) {
    const auto& e = m.emissions[static_cast<std::size_t>(j)];
    const auto& d = m.durations[static_cast<std::size_t>(j)];
    out << "state " << j << "\nduration " << d.shape() << ' ' << d.scale() << "\nmean";
    detail::put_row(out, e.mean);
    out << "kernel " << smoothness_value(e.temporal.smoothness()) << ' ' << e.temporal.variance() << ' '
        << e.temporal.lengthscale() << '\n';
    detail::put_matrix(out, "task_factor", e.task.cholesky_factor());
  }
  out << "noise";
  detail::put_row(out, m.noise.variances());
  if (m.pca) {
    const auto& p = *m.pca;
    out << "pca " << p.num_components() << ' ' << p.input_dim() << ' ' << (p.whiten ? 1 : 0) << "\npca_means";
    detail::put_row(out, p.feature_means);
    out << "pca_variance";
    detail::put_row(out, p.explained_variance);
    detail::put_matrix(out, "pca_components", p.components);
  } else {
    out << "pca 0\n";
  }
  out << "end\n";
}

inline SwitchingGPModel read_model(std::istream& in) {
  detail::TokenReader r(in);
  r.expect("sgpmon-model");
  if (r.integer() != 1) fail(ErrorKind::Format, "model file: unsupported version");
  SwitchingGPModel m;
  r.expect("states");
  m.num_states = static_cast<int>(r.integer());
  r.expect("features");
  m.num_features = static_cast<int>(r.integer());
  if (m.num_states < 1 || m.num_features < 1) fail(ErrorKind::Format, "model file: bad dimensions");
  r.expect("duration_cap");
  m.duration_cap = static_cast<int>(r.integer());
  r.expect("shared_task");
  m.shared_task = r.integer() != 0;
  r.expect("trained");
  for (int j = 0; j < m.num_states; ++j) m.trained.push_back(r.integer() != 0);
  r.expect("initial");
  m.initial = r.vector(r.integer());
  m.transitions = TransitionMatrix(r.matrix("transitions", m.num_states, m.num_states));
  for (int j = 0; j < m.num_states; ++j) {
    r.expect("state");
    if (r.integer() != j) fail(ErrorKind::Format, "model file: states out of order");
    r.expect("duration");
    const double shape = r.real();
    m.durations.emplace_back(shape, r.real());
    r.expect("mean");
    VectorXd mean = r.vector(m.num_features);
    r.expect("kernel");
    const Smoothness nu = detail::smoothness_from(r.real());
    const double var = r.real();
    const MaternKernel k(var, r.real(), nu);
    m.emissions.push_back({std::move(mean), k, TaskCovariance(r.matrix("task_factor", m.num_features, m.num_features))});
  }
  r.expect("noise");
  m.noise = NoiseModel(r.vector(m.num_features));
  r.expect("pca");
  if (const long k = r.integer(); k > 0) {
    PcaProjection p;
    const long d = r.integer();
    p.whiten = r.integer() != 0;
    r.expect("pca_means");
    p.feature_means = r.vector(d);
    r.expect("pca_variance");
    p.explained_variance = r.vector(k);
    p.components = r.matrix("pca_components", k, d);
    m.pca = std::move(p);
  }
  r.expect("end");
  m.validate();
  return m;
}

inline void save_model(const fs::path& path, const SwitchingGPModel& m) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Format, "cannot write " + path.string());
  write_model(out, m);
}

inline SwitchingGPModel load_model(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Format, "cannot open " + path.string());
  return read_model(in);
}

}  // namespace sgpmon
