#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sgpmon/circulant.hpp"

using namespace sgpmon;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(Embed, ReflectsInterior) {
  EXPECT_EQ(embed_circulant(vec({1, 2, 3})).first_row(), vec({1, 2, 3, 2}));
  EXPECT_EQ(embed_circulant(vec({4, 5})).first_row(), vec({4, 5}));
  EXPECT_EQ(embed_circulant(vec({1, 0.5, 0.25, 0.125})).first_row(), vec({1, 0.5, 0.25, 0.125, 0.25, 0.5}));
}

TEST(Embed, RejectsShortInput) {
  try {
    embed_circulant(vec({1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
}

TEST(Embed, LeadingBlockIsTheToeplitzMatrix) {
  const MaternKernel k(1.2, 3.0);
  for (Eigen::Index t : {1, 2, 5, 12}) {
    const MatrixXd dense = embed_circulant(autocovariance(k, t)).dense();
    EXPECT_EQ(dense.topLeftCorner(t + 1, t + 1), gram_matrix(k, t));
    EXPECT_TRUE(embed_circulant(autocovariance(k, t)).is_symmetric());
  }
}

TEST(Eigenvalues, HandComputedCases) {
  const auto e = circulant_eigenvalues(CirculantSpec(vec({2, 1, 0, 1})));
  const double expected[] = {4, 2, 0, 2};
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(e[k].real(), expected[k], 1e-12);
    EXPECT_NEAR(e[k].imag(), 0.0, 1e-12);
  }
  for (const auto& v : circulant_eigenvalues(CirculantSpec(vec({3.5, 0, 0, 0, 0, 0})))) {
    EXPECT_NEAR(v.real(), 3.5, 1e-12);
  }
  const auto c = circulant_eigenvalues(CirculantSpec(VectorXd::Constant(6, 0.7)));
  EXPECT_NEAR(c[0].real(), 6 * 0.7, 1e-12);
  for (std::size_t k = 1; k < c.size(); ++k) EXPECT_NEAR(std::abs(c[k]), 0.0, 1e-12);
}

TEST(Eigenvalues, MatchNaiveDftAndAreRealForEmbeddings) {
  const MaternKernel k(0.8, 2.5, Smoothness::Half);
  const CirculantSpec spec = embed_circulant(autocovariance(k, 9));
  const auto naive = oracle::naive_dft(spec.first_row());
  for (std::size_t i = 0; i < naive.size(); ++i) {
    EXPECT_NEAR(std::abs(spec.eigenvalues()[i] - naive[i]), 0.0, 1e-10);
    EXPECT_LT(std::abs(spec.eigenvalues()[i].imag()), 1e-9);
  }
}

TEST(Matvec, ToeplitzProductIsExact) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (auto nu : {Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves}) {
    for (Eigen::Index t : {1, 4, 31, 64}) {
      const MaternKernel k(1.4, 5.0, nu);
      const VectorXd v = VectorXd::NullaryExpr(t + 1, [&] { return normal(rng); });
      const VectorXd fast = toeplitz_matvec(embed_circulant(autocovariance(k, t)), v);
      EXPECT_LT((fast - gram_matrix(k, t) * v).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Matvec, CirculantProductMatchesDense) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  const VectorXd row = VectorXd::NullaryExpr(7, [&] { return normal(rng); });
  const CirculantSpec spec(row);
  const VectorXd v = VectorXd::NullaryExpr(7, [&] { return normal(rng); });
  EXPECT_LT((circulant_matvec(spec, v) - spec.dense() * v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LogdetSolve, ScaledIdentity) {
  const auto r = circulant_logdet_solve(CirculantSpec(vec({2, 0, 0, 0})), VectorXd::Ones(4));
  EXPECT_NEAR(r.logdet, 4 * std::log(2.0), 1e-12);
  EXPECT_LT((r.solution - VectorXd::Constant(4, 0.5)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LogdetSolve, MatchesDenseFactorization) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.3, 4.0);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index t = 1 + trial % 8;
    // Exponential kernels embed to positive-definite circulants; a ridge keeps them well conditioned.
    VectorXd col = autocovariance(MaternKernel(unif(rng), unif(rng), Smoothness::Half), t);
    col[0] += 0.2;
    const CirculantSpec spec = embed_circulant(col);
    const VectorXd rhs = VectorXd::NullaryExpr(spec.size(), [&] { return normal(rng); });
    const auto r = circulant_logdet_solve(spec, rhs);
    const MatrixXd dense = spec.dense();
    Eigen::LLT<MatrixXd> llt(dense);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    EXPECT_NEAR(r.logdet, logdet, 1e-8 * std::max(1.0, std::abs(logdet)));
    const VectorXd x = llt.solve(rhs);
    EXPECT_LT((r.solution - x).norm() / x.norm(), 1e-8);
    EXPECT_LT((dense * r.solution - rhs).norm() / rhs.norm(), 1e-8);
  }
}

TEST(LogdetSolve, ZeroEigenvalueIsSingular) {
  try {
    circulant_logdet_solve(CirculantSpec(vec({2, 1, 0, 1})), VectorXd::Ones(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularEmbedding);
  }
}

TEST(BlockCirculant, PairSequencesAreScaledTemporalSpectra) {
  MatrixXd task(2, 2);
  task << 2.0, 0.3, 0.3, 1.0;
  const auto spec = BlockCirculantSpec::from_kernel(MaternKernel(1.0, 2.0), task, 9);
  const auto& base = spec.temporal().eigenvalues();
  const auto pair = spec.pair_eigenvalues(0, 1);
  for (std::size_t k = 0; k < base.size(); ++k) EXPECT_NEAR(std::abs(pair[k] - 0.3 * base[k]), 0.0, 1e-14);
  const MatrixXd blk = spec.fourier_block(3, VectorXd::Constant(2, 0.1));
  EXPECT_NEAR(blk(0, 0), 2.0 * base[3].real() + 0.1, 1e-14);
}

class FastLoglikTest : public ::testing::Test {
 protected:
  static double exact(const MaternKernel& k, const MatrixXd& task, const VectorXd& noise, const MatrixXd& r) {
    const MatrixXd cov = oracle::segment_covariance(k, r.rows(), task, noise);
    return oracle::mvn_logpdf(oracle::feature_major(r), VectorXd::Zero(r.size()), cov);
  }
};

TEST_F(FastLoglikTest, SingleStepIsExact) {
  MatrixXd task(2, 2);
  task << 1.5, 0.4, 0.4, 0.9;
  const VectorXd noise = (VectorXd(2) << 0.2, 0.3).finished();
  const MaternKernel k(1.1, 3.0);
  const MatrixXd r = (MatrixXd(1, 2) << 0.7, -1.2).finished();
  EXPECT_NEAR(fast_segment_loglik(k, task, noise, r).loglik, exact(k, task, noise, r), 1e-12);
}

TEST_F(FastLoglikTest, ZeroResidualLeavesOnlyDeterminant) {
  const MaternKernel k(1.0, 2.0);
  const MatrixXd task = MatrixXd::Identity(1, 1);
  const VectorXd noise = VectorXd::Constant(1, 0.25);
  const Eigen::Index n = 32;
  const auto fast = fast_segment_loglik(k, task, noise, MatrixXd::Zero(n, 1));
  const MatrixXd cov = oracle::segment_covariance(k, n, task, noise);
  const double logdet = 2.0 * Eigen::LLT<MatrixXd>(cov).matrixLLT().diagonal().array().log().sum();
  EXPECT_NEAR(fast.loglik, -0.5 * (logdet + n * oracle::kLog2Pi), 1e-6 * std::abs(fast.loglik));
}

TEST_F(FastLoglikTest, MatchesDenseForSingleFeature) {
  std::mt19937_64 rng(21);
  for (Eigen::Index n : {4, 16, 33, 64}) {
    const MaternKernel k(1.0, static_cast<double>(n) / 8.0);
    const MatrixXd task = MatrixXd::Identity(1, 1);
    const VectorXd noise = VectorXd::Constant(1, 0.3);
    const MatrixXd r = oracle::sample_segment(rng, oracle::segment_covariance(k, n, task, noise), n, 1);
    const double ex = exact(k, task, noise, r);
    const double fast = fast_segment_loglik(k, task, noise, r).loglik;
    EXPECT_LT(std::abs(fast - ex) / std::abs(ex), 0.02) << "n=" << n;
  }
}

TEST_F(FastLoglikTest, MatchesDenseForCorrelatedFeatures) {
  std::mt19937_64 rng(22);
  for (Eigen::Index p : {2, 3}) {
    for (Eigen::Index n : {16, 32, 64}) {
      const MaternKernel k(1.0, static_cast<double>(n) / 8.0);
      const MatrixXd task = oracle::random_spd(rng, p);
      const VectorXd noise = VectorXd::LinSpaced(p, 0.1, 0.4);
      const MatrixXd r = oracle::sample_segment(rng, oracle::segment_covariance(k, n, task, noise), n, p);
      const double ex = exact(k, task, noise, r);
      EXPECT_LT(std::abs(fast_segment_loglik(k, task, noise, r).loglik - ex) / std::abs(ex), 0.02);
    }
  }
}

TEST_F(FastLoglikTest, GapShrinksWithSegmentLength) {
  std::mt19937_64 rng(23);
  const MaternKernel k(1.0, 2.0);
  const MatrixXd task = oracle::random_spd(rng, 2);
  const VectorXd noise = VectorXd::Constant(2, 0.2);
  std::vector<double> gaps;
  for (Eigen::Index n : {16, 32, 64, 128}) {
    double total = 0.0;
    for (int rep = 0; rep < 4; ++rep) {
      const MatrixXd r = oracle::sample_segment(rng, oracle::segment_covariance(k, n, task, noise), n, 2);
      total += std::abs(fast_segment_loglik(k, task, noise, r).loglik - exact(k, task, noise, r));
    }
    gaps.push_back(total / (4.0 * static_cast<double>(n * 2)));
  }
  for (std::size_t i = 1; i < gaps.size(); ++i) {
    // 10% slack for sampling variation; gaps at rounding level count as converged.
    EXPECT_LE(gaps[i], 1.1 * gaps[i - 1] + 1e-12) << "gap " << i;
  }
}

TEST_F(FastLoglikTest, NonPositiveEmbeddingIsReported) {
  // Very long lengthscales relative to the segment produce negative circulant eigenvalues.
  const MaternKernel k(1.0, 50.0, Smoothness::FiveHalves);
  const CirculantSpec spec = embed_circulant(autocovariance(k, 5));
  double min_eig = 1e300;
  for (const auto& e : spec.eigenvalues()) min_eig = std::min(min_eig, e.real());
  ASSERT_LT(min_eig, 0.0);
  try {
    fast_segment_loglik(k, MatrixXd::Identity(1, 1), VectorXd::Constant(1, 0.1), MatrixXd::Ones(6, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularEmbedding);
  }
}
