#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "sgpmon/filter.hpp"
#include "sgpmon/likelihood.hpp"
#include "sgpmon/synthetic.hpp"

using namespace sgpmon;

namespace {

SwitchingGPModel random_tiny_model(std::mt19937_64& rng, int a, int dmax, int p) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SwitchingGPModel m;
  m.num_states = a;
  m.num_features = p;
  MatrixXd trans = MatrixXd::Ones(1, 1);
  if (a > 1) {
    trans = MatrixXd::Zero(a, a);
    for (int i = 0; i < a; ++i) {
      for (int j = 0; j < a; ++j)
        if (i != j) trans(i, j) = 0.1 + u(rng);
      trans.row(i) /= trans.row(i).sum();
      Eigen::Index arg;
      trans.row(i).maxCoeff(&arg);
      trans(i, arg) += 1.0 - trans.row(i).sum();
    }
  }
  m.transitions = TransitionMatrix(trans);
  for (int j = 0; j < a; ++j) {
    m.durations.emplace_back(0.5 + 4.0 * u(rng), 0.3 + 2.0 * u(rng));
    MatrixXd l = MatrixXd::Zero(p, p);
    for (int r = 0; r < p; ++r)
      for (int c = 0; c <= r; ++c) l(r, c) = r == c ? 0.5 + u(rng) : u(rng) - 0.5;
    m.emissions.push_back({VectorXd::NullaryExpr(p, [&] { return 2.0 * u(rng) - 1.0; }),
                           MaternKernel(0.3 + u(rng), 0.5 + 3.0 * u(rng), static_cast<Smoothness>(j % 3)),
                           TaskCovariance(l)});
  }
  m.noise = NoiseModel(VectorXd::NullaryExpr(p, [&] { return 0.1 + 0.3 * u(rng); }));
  m.trained.assign(static_cast<std::size_t>(a), true);
  m.duration_cap = dmax;
  return m;
}

struct OracleResult {
  VectorXd posterior;
  double log_evidence;
};

// Exhaustive enumeration of every segmentation of rows 0..t-1 whose last segment
// may still be running, weighted by initial, duration, transition and emission terms.
OracleResult enumerate(const SwitchingGPModel& m, const MatrixXd& y, const MaskMatrix& mask, int t) {
  const auto pmfs = m.duration_pmfs();
  const int a = m.num_states;
  VectorXd mass = VectorXd::Zero(a);
  auto emission = [&](int state, int start, int len) {
    return segment_emission_loglik(m.emissions[static_cast<std::size_t>(state)], m.noise, y.middleRows(start, len),
                                   mask.middleRows(start, len));
  };
  std::function<void(int, int, double)> rec = [&](int pos, int prev, double logw) {
    for (int j = 0; j < a; ++j) {
      double lw = logw;
      if (prev < 0) {
        lw += -std::log(static_cast<double>(a));
      } else {
        const double pij = m.transitions(prev, j);
        if (pij == 0.0) continue;
        lw += std::log(pij);
      }
      const auto& pmf = pmfs[static_cast<std::size_t>(j)];
      for (int d = 1; d <= m.duration_cap && pos + d <= t; ++d) {
        const double seg = emission(j, pos, d);
        if (pos + d == t) {
          const double s = pmf.survival(d);
          if (s > 0) mass[j] += std::exp(lw + seg + std::log(s));
        } else if (pmf.pmf(d) > 0) {
          rec(pos + d, j, lw + seg + std::log(pmf.pmf(d)));
        }
      }
    }
  };
  rec(0, -1, 0.0);
  return {mass / mass.sum(), std::log(mass.sum())};
}

SwitchingGPModel separated_model(double gap) {
  SwitchingGPModel m;
  m.num_states = 2;
  m.num_features = 2;
  m.durations = {GammaDuration(8.0, 2.0), GammaDuration(6.0, 3.0)};
  m.transitions = TransitionMatrix::uniform(2);
  m.emissions = {StateEmission{VectorXd::Zero(2), MaternKernel(0.5, 3.0), TaskCovariance::identity(2)},
                 StateEmission{VectorXd::Constant(2, gap), MaternKernel(0.5, 3.0), TaskCovariance::identity(2)}};
  m.noise = NoiseModel(VectorXd::Constant(2, 0.5));
  m.trained = {true, true};
  m.duration_cap = 60;
  return m;
}

MaskVector all(Eigen::Index p) { return MaskVector::Constant(p, true); }

}  // namespace

TEST(StateSpace, AutocovarianceMatchesKernel) {
  for (auto nu : {Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves}) {
    const MaternKernel k(1.7, 2.3, nu);
    const auto ss = matern_state_space(k);
    MatrixXd ak = MatrixXd::Identity(ss.order(), ss.order());
    for (int lag = 0; lag <= 12; ++lag) {
      EXPECT_NEAR((ak * ss.stationary)(0, 0), k(lag), 1e-10) << lag;
      ak = ss.transition * ak;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(ss.process_cov);
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(DurationTransition, NormalizedAndForbidden) {
  std::mt19937_64 rng(2);
  const auto m = random_tiny_model(rng, 3, 3, 1);
  const SemiMarkovFilter f(m);
  for (int i = 0; i < 3; ++i) {
    for (int dprev = 1; dprev <= 3; ++dprev) {
      double total = 0;
      for (int j = 0; j < 3; ++j)
        for (int d = 1; d <= 3; ++d) total += f.duration_transition(i, dprev, j, d);
      EXPECT_NEAR(total, 1.0, 1e-8);
    }
    EXPECT_EQ(f.duration_transition(i, i, 2), 0.0);
  }
  const GammaDuration g(2.0, 1.0);
  auto m2 = m;
  m2.durations[1] = g;
  m2.duration_cap = 200;
  const SemiMarkovFilter f2(m2);
  EXPECT_NEAR(f2.duration_transition(0, 1, 2) / m2.transitions(0, 1), g.cdf(2.5) - g.cdf(1.5), 1e-10);
}

class BruteForce : public ::testing::TestWithParam<EmissionBackend> {};

TEST_P(BruteForce, MatchesExhaustiveSegmentation) {
  std::mt19937_64 rng(GetParam() == EmissionBackend::StateSpace ? 77 : 78);
  std::uniform_int_distribution<int> states(1, 3), len(1, 5), cap(1, 3), feat(1, 2);
  std::bernoulli_distribution drop(0.2);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const int a = states(rng), t = len(rng), dmax = cap(rng), p = feat(rng);
    const auto m = random_tiny_model(rng, a, dmax, p);
    const auto sample = generate_synthetic(m, t, rng());
    MaskMatrix mask = MaskMatrix::Constant(t, p, true);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = !drop(rng);
    const SemiMarkovFilter f(m, {30.0, GetParam()});
    ForwardState s = f.empty_state();
    for (int k = 1; k <= t; ++k) {
      s = f.step(s, sample.observations.row(k - 1).transpose(), mask.row(k - 1).transpose());
      const auto oracle = enumerate(m, sample.observations, mask, k);
      const VectorXd post = f.state_posterior(s);
      worst = std::max(worst, (post - oracle.posterior).cwiseAbs().maxCoeff());
      EXPECT_NEAR(s.log_evidence, oracle.log_evidence, 1e-8) << "instance " << inst << " step " << k;
    }
  }
  EXPECT_LT(worst, 1e-8);
}

INSTANTIATE_TEST_SUITE_P(Backends, BruteForce,
                         ::testing::Values(EmissionBackend::StateSpace, EmissionBackend::Dense));

TEST(Filter, BackendsAgreeOnLongerStream) {
  std::mt19937_64 rng(5);
  auto m = random_tiny_model(rng, 3, 12, 2);
  const auto sample = generate_synthetic(m, 60, 9);
  MaskMatrix mask = MaskMatrix::Constant(60, 2, true);
  std::bernoulli_distribution drop(0.3);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = !drop(rng);
  const SemiMarkovFilter fk(m), fd(m, {30.0, EmissionBackend::Dense});
  ForwardState sk = fk.empty_state(), sd = fd.empty_state();
  for (Eigen::Index t = 0; t < 60; ++t) {
    sk = fk.step(sk, sample.observations.row(t).transpose(), mask.row(t).transpose());
    sd = fd.step(sd, sample.observations.row(t).transpose(), mask.row(t).transpose());
    EXPECT_LT((fk.state_posterior(sk) - fd.state_posterior(sd)).cwiseAbs().maxCoeff(), 1e-8);
  }
  EXPECT_NEAR(sk.log_evidence, sd.log_evidence, 1e-7);
}

TEST(Filter, SymmetricModelGivesUniformPosterior) {
  auto m = separated_model(0.0);
  m.durations[1] = m.durations[0];
  const SemiMarkovFilter f(m);
  const auto data = generate_synthetic(m, 30, 1);
  ForwardState s = f.empty_state();
  for (Eigen::Index t = 0; t < 30; ++t) {
    s = f.step(s, data.observations.row(t).transpose(), all(2));
    const VectorXd post = f.state_posterior(s);
    EXPECT_NEAR(post[0], 0.5, 1e-9);
    EXPECT_NEAR(post.sum(), 1.0, 1e-12);
  }
  EXPECT_EQ(map_state(f.state_posterior(s)), 0);
}

TEST(Filter, InitFavorsMatchingState) {
  const auto m = separated_model(10.0 * std::sqrt(1.0));
  const SemiMarkovFilter f(m);
  const auto s = forward_init(f, VectorXd::Constant(2, 10.0), all(2));
  EXPECT_EQ(map_state(f.state_posterior(s)), 1);
  EXPECT_EQ(f.log_alpha_table(s).rows(), 2);
}

TEST(Filter, SingleStateIsPointMass) {
  SwitchingGPModel m;
  m.num_states = 1;
  m.num_features = 1;
  m.durations = {GammaDuration(3, 2)};
  m.transitions = TransitionMatrix::uniform(1);
  m.emissions = {StateEmission{VectorXd::Zero(1), MaternKernel(1, 2), TaskCovariance::identity(1)}};
  m.noise = NoiseModel(VectorXd::Constant(1, 0.1));
  m.trained = {true};
  m.duration_cap = 1;
  const SemiMarkovFilter f(m);
  ForwardState s = f.empty_state();
  for (int t = 0; t < 5; ++t) {
    s = f.step(s, VectorXd::Constant(1, 0.3 * t), all(1));
    EXPECT_DOUBLE_EQ(f.state_posterior(s)[0], 1.0);
  }
  // A=1, D_max=1: the mixture is the state's prior predictive.
  const std::vector<int> g{0};
  const auto mix = predictive_mixture(f, s, g);
  ASSERT_EQ(mix.components.size(), 1u);
  EXPECT_NEAR(mix.components[0].mean[0], 0.0, 1e-14);
  EXPECT_NEAR(mix.components[0].cov(0, 0), 1.1, 1e-12);
}

TEST(Filter, MaskedRowFollowsDynamicsOnly) {
  std::mt19937_64 rng(8);
  const auto m = random_tiny_model(rng, 3, 6, 2);
  const auto data = generate_synthetic(m, 10, 3);
  const SemiMarkovFilter f(m);
  ForwardState s = f.empty_state();
  for (Eigen::Index t = 0; t < 10; ++t) s = f.step(s, data.observations.row(t).transpose(), all(2));
  const auto pred = f.predict(s);
  VectorXd prior = VectorXd::Zero(3);
  for (const auto& c : pred.candidates) prior[c.state] += std::exp(c.log_weight);
  const auto next = f.update(pred, VectorXd::Constant(2, std::nan("")), MaskVector::Constant(2, false));
  EXPECT_LT((f.state_posterior(next) - prior).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(next.last_increment, 0.0, 1e-12);
}

TEST(Filter, InvariantToEmissionScale) {
  std::mt19937_64 rng(4);
  const auto m = random_tiny_model(rng, 3, 8, 2);
  const auto data = generate_synthetic(m, 40, 2);
  auto scaled = m;
  const double c = 3.7;
  for (auto& e : scaled.emissions) {
    e.mean *= c;
    e.temporal = MaternKernel(e.temporal.variance() * c * c, e.temporal.lengthscale(), e.temporal.smoothness());
  }
  scaled.noise = NoiseModel(m.noise.variances() * c * c);
  const SemiMarkovFilter f(m), g(scaled);
  ForwardState a = f.empty_state(), b = g.empty_state();
  for (Eigen::Index t = 0; t < 40; ++t) {
    a = f.step(a, data.observations.row(t).transpose(), all(2));
    b = g.step(b, c * data.observations.row(t).transpose(), all(2));
    EXPECT_LT((f.state_posterior(a) - g.state_posterior(b)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(MapState, TieGoesToLowestIndex) {
  EXPECT_EQ(map_state((VectorXd(3) << 0.4, 0.2, 0.4).finished()), 0);
  EXPECT_EQ(map_state((VectorXd(3) << 0.0, 1.0, 0.0).finished()), 1);
  EXPECT_EQ(map_state((VectorXd(3) << 0.2, 0.3, 0.5).finished()), 2);
}

TEST(Filter, WellSeparatedStreamAccuracy) {
  const auto m = separated_model(5.0 * std::sqrt(1.0));
  const auto data = generate_synthetic(m, 200, 12);
  const auto run = run_filter(SemiMarkovFilter(m), data);
  int hit = 0;
  for (std::size_t t = 0; t < 200; ++t) hit += run.map_states[t] == data.labels[t];
  EXPECT_GE(hit, 180);
}

TEST(Filter, EvidenceConsistentWithGenerator) {
  const auto m = separated_model(3.0);
  const auto data = generate_synthetic(m, 2000, 31);
  const auto run = run_filter(SemiMarkovFilter(m), data);
  const double own = -negative_loglik(m, {data}) / 2000.0;
  const double filt = run.log_evidence / 2000.0;
  EXPECT_NEAR(filt, own, 0.1 * std::abs(own));
}

TEST(Filter, RejectsModelWithoutTrainedStates) {
  auto m = separated_model(0.0);
  m.trained = {false, false};
  EXPECT_THROW(SemiMarkovFilter{m}, Error);
}

TEST(Mixture, MeanMatchesMonteCarlo) {
  std::mt19937_64 rng(6);
  const auto m = random_tiny_model(rng, 3, 10, 2);
  const auto data = generate_synthetic(m, 15, 4);
  const SemiMarkovFilter f(m);
  ForwardState s = f.empty_state();
  for (Eigen::Index t = 0; t < 15; ++t) s = f.step(s, data.observations.row(t).transpose(), all(2));
  const std::vector<int> g{0, 1};
  const auto mix = predictive_mixture(f, s, g);
  double wsum = 0;
  for (const auto& c : mix.components) wsum += std::exp(c.log_weight);
  EXPECT_NEAR(wsum, 1.0, 1e-12);
  const int n = 1000000;
  VectorXd sum = VectorXd::Zero(2), sq = VectorXd::Zero(2);
  std::mt19937_64 draw(99);
  for (int i = 0; i < n; ++i) {
    const VectorXd y = sample_mixture(mix, draw);
    sum += y;
    sq += y.cwiseAbs2();
  }
  const VectorXd mc = sum / n;
  const VectorXd se = ((sq / n - mc.cwiseAbs2()) / n).cwiseSqrt();
  const VectorXd exact = mix.mean();
  for (int k = 0; k < 2; ++k) EXPECT_LT(std::abs(mc[k] - exact[k]), 3 * se[k]);
}

TEST(Mixture, PruningChangesDensityNegligibly) {
  std::mt19937_64 rng(10);
  const auto m = random_tiny_model(rng, 3, 15, 1);
  const auto data = generate_synthetic(m, 25, 6);
  const SemiMarkovFilter f(m, {1e9, EmissionBackend::StateSpace});
  ForwardState s = f.empty_state();
  for (Eigen::Index t = 0; t < 25; ++t) s = f.step(s, data.observations.row(t).transpose(), all(1));
  const auto pred = f.predict(s);
  const std::vector<int> g{0};
  const auto full = f.mixture(pred, g, 1e9), pruned = f.mixture(pred, g, 30.0);
  double tv = 0;
  const double lo = -15, hi = 15, h = 0.001;
  for (double y = lo; y < hi; y += h) {
    const VectorXd v = VectorXd::Constant(1, y);
    tv += 0.5 * std::abs(std::exp(full.log_density(v)) - std::exp(pruned.log_density(v))) * h;
  }
  EXPECT_LT(tv, 1e-9);
}

TEST(Mixture, ComponentsReproduceForwardStep) {
  std::mt19937_64 rng(12);
  const auto m = random_tiny_model(rng, 3, 8, 2);
  const auto data = generate_synthetic(m, 12, 5);
  const SemiMarkovFilter f(m);
  ForwardState s = f.empty_state();
  for (Eigen::Index t = 0; t < 11; ++t) s = f.step(s, data.observations.row(t).transpose(), all(2));
  const auto pred = f.predict(s);
  const std::vector<int> g{1};
  const auto mix = f.mixture(pred, g, 1e9);
  const VectorXd y = data.observations.row(11).transpose();
  VectorXd post = VectorXd::Zero(3);
  for (const auto& c : mix.components) {
    post[c.state] += std::exp(c.log_weight + gaussian_logpdf_centered(checked_llt(c.cov, "c"), y.tail(1) - c.mean));
  }
  post /= post.sum();
  MaskVector mask = MaskVector::Constant(2, false);
  mask[1] = true;
  const auto next = f.update(pred, y, mask);
  EXPECT_LT((f.state_posterior(next) - post).cwiseAbs().maxCoeff(), 1e-12);
}
