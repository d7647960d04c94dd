#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sgpmon/gp_predict.hpp"

using namespace sgpmon;

namespace {

StateEmission emission(Eigen::Index p, double var = 1.0, double ell = 3.0) {
  return {VectorXd::Zero(p), MaternKernel(var, ell), TaskCovariance::identity(p)};
}

}  // namespace

TEST(Conditional, InterpolatesNearNoiselessData) {
  const auto e = emission(1);
  const NoiseModel noise(VectorXd::Constant(1, 1e-12));
  const std::vector<ObservedEntry> obs{{0, 0, 0.3}, {2, 0, -1.1}, {5, 0, 0.7}};
  const std::vector<double> q{0, 2, 5};
  const auto post = posterior_predict(e, noise, obs, q, 0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(post.mean[i], obs[static_cast<std::size_t>(i)].value, 1e-6);
    EXPECT_LT(post.covariance(i, i), 1e-6);
  }
}

TEST(Conditional, PriorWithoutObservations) {
  StateEmission e = emission(2, 2.0);
  e.mean << 1.5, -0.5;
  const NoiseModel noise(VectorXd::Constant(2, 0.1));
  const std::vector<double> q{0, 1, 4};
  const auto post = posterior_predict(e, noise, {}, q, 1);
  EXPECT_TRUE(post.mean.isApprox(VectorXd::Constant(3, -0.5)));
  EXPECT_NEAR(post.covariance(0, 0), 2.0, 1e-14);
  EXPECT_NEAR(post.covariance(0, 2), e.temporal(4.0), 1e-14);
}

TEST(Conditional, ScalarClosedForm) {
  const auto e = emission(1, 1.7, 2.0);
  const NoiseModel noise(VectorXd::Constant(1, 0.3));
  const double y = 0.9;
  const std::vector<ObservedEntry> obs{{0, 0, y}};
  const std::vector<double> q{3};
  const auto post = posterior_predict(e, noise, obs, q, 0);
  const double k01 = e.temporal(3.0);
  const double s = 1.7 + 0.3 + kGramJitter * 1.7;
  EXPECT_NEAR(post.mean[0], k01 / s * y, 1e-12);
  EXPECT_NEAR(post.covariance(0, 0), 1.7 - k01 * k01 / s, 1e-12);
}

TEST(Conditional, CorrelatedFeatureReducesVariance) {
  MatrixXd l(2, 2);
  l << 1.0, 0.0, 0.95, std::sqrt(1 - 0.95 * 0.95);
  StateEmission e{VectorXd::Zero(2), MaternKernel(1.0, 3.0), TaskCovariance(l)};
  const NoiseModel noise(VectorXd::Constant(2, 0.01));
  const std::vector<double> q{0};
  const auto prior = posterior_predict(e, noise, {}, q, 1);
  const std::vector<ObservedEntry> obs{{0, 0, 1.0}};
  const auto post = posterior_predict(e, noise, obs, q, 1);
  EXPECT_LT(post.covariance(0, 0), 0.2 * prior.covariance(0, 0));
  EXPECT_GT(post.mean[0], 0.8);
  // Independent features carry no information about each other.
  const auto ind = posterior_predict(emission(2), noise, obs, q, 1);
  EXPECT_NEAR(ind.covariance(0, 0), 1.0, 1e-12);
}

TEST(Conditional, VarianceShrinksAsDataAccumulate) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  const auto e = emission(3);
  const NoiseModel noise(VectorXd::Constant(3, 0.2));
  const std::vector<double> q{2.5, 7};
  std::vector<ObservedEntry> obs;
  auto prev = posterior_predict(e, noise, obs, q, 0);
  for (int t = 0; t < 8; ++t) {
    obs.push_back({static_cast<double>(t), t % 3, normal(rng)});
    const auto next = posterior_predict(e, noise, obs, q, 0);
    for (int i = 0; i < 2; ++i) EXPECT_LE(next.covariance(i, i), prev.covariance(i, i) + 1e-12);
    prev = next;
  }
}

TEST(EmissionLoglik, FullyMaskedIsZero) {
  const auto e = emission(2);
  const NoiseModel noise(VectorXd::Constant(2, 0.1));
  const MatrixXd w = MatrixXd::Random(4, 2);
  EXPECT_EQ(segment_emission_loglik(e, noise, w, MaskMatrix::Constant(4, 2, false)), 0.0);
}

TEST(EmissionLoglik, MatchesDenseOracle) {
  std::mt19937_64 rng(8);
  for (Eigen::Index p : {1, 3}) {
    const MatrixXd task = oracle::random_spd(rng, p);
    StateEmission e{VectorXd::LinSpaced(p, -1, 1), MaternKernel(0.8, 2.5, Smoothness::FiveHalves),
                    TaskCovariance::from_matrix(task)};
    const VectorXd nv = VectorXd::LinSpaced(p, 0.1, 0.4);
    const NoiseModel noise(nv);
    const Eigen::Index n = 6;
    const MatrixXd cov = oracle::segment_covariance(e.temporal, n, task, nv);
    MatrixXd w = oracle::sample_segment(rng, cov, n, p);
    w.rowwise() += e.mean.transpose();
    const VectorXd mean_fm = e.mean.replicate(1, n).transpose().reshaped();
    const double expect = oracle::mvn_logpdf(oracle::feature_major(w), mean_fm, cov);
    EXPECT_NEAR(segment_emission_loglik(e, noise, w, MaskMatrix::Constant(n, p, true)), expect, 1e-8);

    // Marginalizing: masking equals dropping rows/columns of the dense covariance.
    MaskMatrix mask = MaskMatrix::Constant(n, p, true);
    mask(1, 0) = false;
    mask(4, p - 1) = false;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index q = 0; q < p; ++q)
      for (Eigen::Index t = 0; t < n; ++t)
        if (mask(t, q)) keep.push_back(q * n + t);
    const auto k = static_cast<Eigen::Index>(keep.size());
    MatrixXd sub(k, k);
    VectorXd xs(k), ms(k);
    const VectorXd x = oracle::feature_major(w);
    for (Eigen::Index i = 0; i < k; ++i) {
      xs[i] = x[keep[static_cast<std::size_t>(i)]];
      ms[i] = mean_fm[keep[static_cast<std::size_t>(i)]];
      for (Eigen::Index j = 0; j < k; ++j) sub(i, j) = cov(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]);
    }
    EXPECT_NEAR(segment_emission_loglik(e, noise, w, mask), oracle::mvn_logpdf(xs, ms, sub), 1e-8);
  }
}

TEST(Metrics, Basics) {
  const MatrixXd truth = MatrixXd::Random(5, 3);
  const MaskMatrix all = MaskMatrix::Constant(5, 3, true);
  auto m = trajectory_metrics(truth, truth, all);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.abs, 0.0);
  m = trajectory_metrics(truth.array() + 0.5, truth, all);
  EXPECT_NEAR(m.mse, 0.25, 1e-14);
  EXPECT_NEAR(m.abs, 0.5, 1e-14);
  EXPECT_EQ(m.count, 15);
  try {
    trajectory_metrics(truth, truth, MaskMatrix::Constant(5, 3, false));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UndefinedMetric);
  }
}
