#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <sstream>
#include <string>

#include "sgpmon/numeric.hpp"

namespace sgpmon {

struct OptimizerConfig {
  int max_iterations = 500;
  /// Converged when |f_{k-window} - f_k| / max(|f_k|, 1) falls below this.
  double relative_tolerance = 1e-6;
  int window = 5;
  int history = 10;
  double gradient_tolerance = 1e-9;
};

struct OptimizerResult {
  VectorXd x;
  double initial_value = 0.0;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;
};

/// Objective returning f(x) and writing ∇f(x) into `grad`.
using Objective = std::function<double(const VectorXd& x, VectorXd& grad)>;

namespace detail {

inline std::string snapshot(const VectorXd& x) {
  std::ostringstream os;
  os.precision(17);
  os << "[";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << "]";
  return os.str();
}

}  // namespace detail

/// Limited-memory BFGS with a backtracking Armijo line search. Every accepted
/// step strictly decreases the objective.
inline OptimizerResult minimize_lbfgs(const Objective& f, VectorXd x0, const OptimizerConfig& cfg = {}) {
  OptimizerResult res;
  VectorXd g(x0.size());
  double fx = f(x0, g);
  if (!std::isfinite(fx) || !g.allFinite()) {
    fail(ErrorKind::NonFinite, "objective is not finite at the initial point " + detail::snapshot(x0));
  }
  res.initial_value = fx;
  res.trace.push_back(fx);
  VectorXd x = std::move(x0);
  std::deque<VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() < cfg.gradient_tolerance) {
      res.converged = true;
      break;
    }
    // Two-loop recursion.
    VectorXd q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[static_cast<std::size_t>(i)] = rho_hist[static_cast<std::size_t>(i)] * s_hist[static_cast<std::size_t>(i)].dot(q);
      q -= alpha[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
    }
    double gamma = 1.0 / std::max(1.0, g.norm());
    if (!s_hist.empty()) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    VectorXd dir = gamma * q;
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(dir);
      dir += s_hist[i] * (alpha[i] - beta);
    }
    dir = -dir;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      // Not a descent direction: restart from steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g / std::max(1.0, g.norm());
      slope = g.dot(dir);
    }

    double step = 1.0;
    VectorXd x_new, g_new(x.size());
    double f_new = fx;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * dir;
      try {
        f_new = f(x_new, g_new);
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::NonPositiveDefinite && err.kind() != ErrorKind::InvalidInput) throw;
        f_new = std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(f_new) && g_new.allFinite() && f_new <= fx + 1e-4 * step * slope && f_new < fx) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No decrease is attainable along the search direction: stationary to precision.
      res.converged = true;
      break;
    }
    if (!(f_new < fx)) {
      fail(ErrorKind::OptimizerContract, "accepted step increased the objective at " + detail::snapshot(x_new));
    }
    const VectorXd s = x_new - x;
    const VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > cfg.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = x_new;
    g = g_new;
    fx = f_new;
    res.trace.push_back(fx);
    res.iterations = it + 1;
    const auto k = res.trace.size();
    if (k > static_cast<std::size_t>(cfg.window)) {
      const double old = res.trace[k - 1 - static_cast<std::size_t>(cfg.window)];
      if (std::abs(old - fx) / std::max(std::abs(fx), 1.0) < cfg.relative_tolerance) {
        res.converged = true;
        break;
      }
    }
  }
  res.x = std::move(x);
  res.value = fx;
  return res;
}

}  // namespace sgpmon
