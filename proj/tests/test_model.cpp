#include <cmath>
#include <random>

#include <boost/math/special_functions/digamma.hpp>
#include <gtest/gtest.h>

#include "sgpmon/model.hpp"
#include "sgpmon/pca.hpp"

using namespace sgpmon;

namespace {

// Exact Gamma MLE shape: root of log k - ψ(k) = v, by Newton on log k.
double gamma_mle_shape(const std::vector<double>& s) {
  double mean = 0, mlog = 0;
  for (double x : s) {
    mean += x;
    mlog += std::log(x);
  }
  mean /= static_cast<double>(s.size());
  mlog /= static_cast<double>(s.size());
  const double v = std::log(mean) - mlog;
  double k = 0.5 / v;
  for (int it = 0; it < 100; ++it) {
    const double f = std::log(k) - boost::math::digamma(k) - v;
    const double df = 1.0 / k - boost::math::trigamma(k);
    k -= f / df;
  }
  return k;
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return static_cast<ErrorKind>(-1);
}

}  // namespace

TEST(SegmentSeries, RunLengths) {
  const auto segs = segment_series(std::vector<int>{0, 0, 1, 1, 1, 0});
  ASSERT_EQ(segs.size(), 3u);
  EXPECT_EQ(segs[0], (Segment{0, 0, 2}));
  EXPECT_EQ(segs[1], (Segment{1, 2, 3}));
  EXPECT_EQ(segs[2], (Segment{0, 5, 1}));
  EXPECT_TRUE(segment_series(std::vector<int>{}).empty());
  EXPECT_EQ(segment_series(std::vector<int>{2}).size(), 1u);
}

TEST(SegmentSeries, DurationsSumToLength) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> lab(0, 2);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<int> labels(40);
    for (auto& l : labels) l = lab(rng);
    Eigen::Index total = 0;
    const auto segs = segment_series(labels);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      total += segs[i].duration;
      if (i) EXPECT_NE(segs[i].state, segs[i - 1].state);
    }
    EXPECT_EQ(total, 40);
  }
}

TEST(GammaFit, SmallSampleMatchesClosedForm) {
  const std::vector<double> s{1, 2, 3, 4};
  const auto g = fit_duration_gamma(s);
  EXPECT_NEAR(g.shape(), 4.26, 0.01);
  EXPECT_NEAR(g.scale(), 0.587, 0.001);
  EXPECT_NEAR(g.shape() * g.scale(), 2.5, 1e-12);
  // Approximation stays close to the exact likelihood root.
  EXPECT_NEAR(g.shape(), gamma_mle_shape(s), 0.015 * gamma_mle_shape(s));
}

TEST(GammaFit, RecoversParameters) {
  std::mt19937_64 rng(11);
  std::gamma_distribution<double> dist(3.0, 4.0);
  std::vector<double> s(10000);
  for (auto& x : s) x = dist(rng);
  const auto g = fit_duration_gamma(s);
  EXPECT_NEAR(g.shape(), 3.0, 0.15);
  EXPECT_NEAR(g.scale(), 4.0, 0.2);
}

TEST(GammaFit, ScaleCovariance) {
  const std::vector<double> s{1.5, 2.0, 7.0, 3.2, 4.4};
  std::vector<double> s2 = s;
  for (auto& x : s2) x *= 3.0;
  const auto a = fit_duration_gamma(s), b = fit_duration_gamma(s2);
  EXPECT_NEAR(a.shape(), b.shape(), 1e-10);
  EXPECT_NEAR(3.0 * a.scale(), b.scale(), 1e-10);
}

TEST(GammaFit, Errors) {
  EXPECT_EQ(kind_of([] { fit_duration_gamma(std::vector<double>{5, 5, 5}); }), ErrorKind::DegenerateDuration);
  EXPECT_EQ(kind_of([] { fit_duration_gamma(std::vector<double>{5}); }), ErrorKind::InsufficientData);
  EXPECT_EQ(kind_of([] { fit_duration_gamma(std::vector<double>{1, -2}); }), ErrorKind::InvalidInput);
}

TEST(DurationPmf, RoundingBins) {
  const GammaDuration g(2.0, 1.0);
  const DurationPmf pmf(g, 200);
  EXPECT_NEAR(pmf.pmf(2), g.cdf(2.5) - g.cdf(1.5), 1e-10);
  EXPECT_NEAR(pmf.pmf(1), g.cdf(1.5), 1e-10);
  double total = 0;
  for (int d = 1; d <= pmf.cap(); ++d) total += pmf.pmf(d);
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(pmf.pmf(0), 0.0);
  EXPECT_EQ(pmf.pmf(201), 0.0);
}

TEST(DurationPmf, TruncationRenormalizes) {
  const GammaDuration g(2.0, 3.0);
  const DurationPmf pmf(g, 4);
  const double z = g.cdf(4.5);
  for (int d = 1; d <= 4; ++d) EXPECT_NEAR(pmf.pmf(d), (g.cdf(d + 0.5) - (d == 1 ? 0 : g.cdf(d - 0.5))) / z, 1e-12);
  EXPECT_DOUBLE_EQ(pmf.survival(1), 1.0);
  EXPECT_NEAR(pmf.survival(3), pmf.pmf(3) + pmf.pmf(4), 1e-14);
  EXPECT_EQ(pmf.survival(5), 0.0);
  EXPECT_EQ(pmf.log_survival(5), kNegInf);
  EXPECT_NEAR(pmf.log_pmf(2), std::log(pmf.pmf(2)), 1e-14);
}

TEST(Transitions, CountsConsecutiveSegments) {
  const std::vector<int> labels{0, 0, 1, 0, 0, 2};
  const auto fit = fit_transitions({segment_series(labels)}, 3);
  const MatrixXd& p = fit.matrix.probs();
  EXPECT_DOUBLE_EQ(p(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 2), 0.5);
  EXPECT_DOUBLE_EQ(p(1, 0), 1.0);
  // State 3 has no outgoing transitions.
  ASSERT_EQ(fit.warnings.size(), 1u);
  EXPECT_DOUBLE_EQ(p(2, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(2, 1), 0.5);
}

TEST(Transitions, RowsStochasticZeroDiagonal) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> lab(0, 3);
  std::vector<std::vector<Segment>> seqs;
  for (int s = 0; s < 5; ++s) {
    std::vector<int> labels(60);
    for (auto& l : labels) l = lab(rng);
    seqs.push_back(segment_series(labels));
  }
  const auto fit = fit_transitions(seqs, 4);
  const MatrixXd& p = fit.matrix.probs();
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(p(i, i), 0.0);
    EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
    EXPECT_GE(p.row(i).minCoeff(), 0.0);
  }
}

TEST(Transitions, SingleStateAndValidation) {
  EXPECT_DOUBLE_EQ(fit_transitions({}, 1).matrix.probs()(0, 0), 1.0);
  MatrixXd bad(2, 2);
  bad << 0.5, 0.5, 1.0, 0.0;
  EXPECT_EQ(kind_of([&] { TransitionMatrix m(bad); }), ErrorKind::InvalidInput);
  bad << 0.0, 0.9, 1.0, 0.0;
  EXPECT_EQ(kind_of([&] { TransitionMatrix m(bad); }), ErrorKind::InvalidInput);
}

TEST(Pca, ProjectionProperties) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  MatrixXd x = MatrixXd::NullaryExpr(300, 6, [&] { return normal(rng); });
  x.col(0) *= 5.0;
  x.col(3) *= 2.0;
  x.col(1) += x.col(0);
  const auto proj = fit_pca(x, 3);
  EXPECT_TRUE((proj.components * proj.components.transpose()).isIdentity(1e-10));
  for (int k = 1; k < 3; ++k) EXPECT_GE(proj.explained_variance[k - 1], proj.explained_variance[k]);
  const MatrixXd z = apply_pca(proj, x);
  EXPECT_LT(z.colwise().mean().cwiseAbs().maxCoeff(), 1e-10);
  const MatrixXd cov = (z.transpose() * z) / 299.0;
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(cov(k, k), proj.explained_variance[k], 1e-8);
  auto white = fit_pca(x, 3, true);
  const MatrixXd zw = apply_pca(white, x);
  EXPECT_TRUE(((zw.transpose() * zw) / 299.0).isIdentity(1e-8));
}

TEST(Pca, RankErrors) {
  MatrixXd x = MatrixXd::Zero(20, 4);
  for (int i = 0; i < 20; ++i) x(i, 0) = i;
  EXPECT_EQ(kind_of([&] { fit_pca(x, 2); }), ErrorKind::InsufficientRank);
  EXPECT_EQ(kind_of([&] { fit_pca(MatrixXd::Random(3, 6), 4); }), ErrorKind::InsufficientRank);
  EXPECT_EQ(kind_of([&] { fit_pca(x, 5); }), ErrorKind::InvalidInput);
}
