#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "sgpmon/fft.hpp"
#include "sgpmon/kernels.hpp"
#include "sgpmon/numeric.hpp"

namespace sgpmon {

/// A circulant matrix held by its first row c and the cached DFT of c.
class CirculantSpec {
 public:
  explicit CirculantSpec(VectorXd first_row) : row_(std::move(first_row)) {
    if (row_.size() == 0) fail(ErrorKind::InvalidInput, "circulant first row must be non-empty");
    eigen_ = fft::dft(std::span<const double>(row_.data(), static_cast<std::size_t>(row_.size())));
  }

  [[nodiscard]] const VectorXd& first_row() const { return row_; }
  [[nodiscard]] const std::vector<fft::Complex>& eigenvalues() const { return eigen_; }
  [[nodiscard]] Eigen::Index size() const { return row_.size(); }

  /// c[k] == c[n-k] for all k: the circulant is symmetric and its spectrum real.
  [[nodiscard]] bool is_symmetric() const {
    const Eigen::Index n = row_.size();
    for (Eigen::Index k = 1; k < n; ++k) {
      if (row_[k] != row_[n - k]) return false;
    }
    return true;
  }

  [[nodiscard]] MatrixXd dense() const {
    const Eigen::Index n = row_.size();
    MatrixXd c(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) c(i, j) = row_[(j - i + n) % n];
    }
    return c;
  }

 private:
  VectorXd row_;
  std::vector<fft::Complex> eigen_;
};

/// Reflects the first column [C(0)…C(T)] of a symmetric Toeplitz matrix into the
/// first row [C(0)…C(T), C(T-1)…C(1)] of its minimal circulant embedding (size 2T).
inline CirculantSpec embed_circulant(const VectorXd& toeplitz_first_col) {
  const Eigen::Index n = toeplitz_first_col.size();
  if (n < 2) fail(ErrorKind::InvalidInput, "circulant embedding needs at least two lags");
  const Eigen::Index t = n - 1;
  VectorXd c(2 * t);
  c.head(n) = toeplitz_first_col;
  for (Eigen::Index k = 1; k < t; ++k) c[t + k] = toeplitz_first_col[t - k];
  return CirculantSpec(std::move(c));
}

inline std::vector<fft::Complex> circulant_eigenvalues(const CirculantSpec& spec) {
  return spec.eigenvalues();
}

namespace detail {

// Multiplies v by the circulant whose spectrum is given at indices 0..n/2
// (Hermitian symmetric sequences only).
inline VectorXd apply_half_spectrum(const std::vector<fft::Complex>& half, const VectorXd& v,
                                    bool invert) {
  const std::size_t n = static_cast<std::size_t>(v.size());
  std::vector<fft::Complex> vh(n / 2 + 1);
  fft::dft_half(std::span<const double>(v.data(), n), vh);
  for (std::size_t k = 0; k <= n / 2; ++k) vh[k] = invert ? vh[k] / half[k] : vh[k] * half[k];
  VectorXd out(v.size());
  fft::idft_half(vh, std::span<double>(out.data(), n));
  return out;
}

inline double singular_tolerance(const std::vector<fft::Complex>& eig) {
  double m = 0.0;
  for (const auto& e : eig) m = std::max(m, std::abs(e));
  return 1e-10 * std::max(m, 1e-300);
}

}  // namespace detail

/// Exact product of the circulant with v, O(n log n).
inline VectorXd circulant_matvec(const CirculantSpec& spec, const VectorXd& v) {
  if (v.size() != spec.size()) fail(ErrorKind::InvalidInput, "circulant_matvec: size mismatch");
  // The first column of the circulant is c[(n-i) mod n]; its DFT is conj(DFT(c)).
  const std::size_t n = static_cast<std::size_t>(v.size());
  std::vector<fft::Complex> half(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) half[k] = std::conj(spec.eigenvalues()[k]);
  return detail::apply_half_spectrum(half, v, false);
}

/// Product of the embedded (T+1)×(T+1) Toeplitz matrix with v through the
/// circulant embedding; exact up to FFT rounding.
inline VectorXd toeplitz_matvec(const CirculantSpec& embedding, const VectorXd& v) {
  const Eigen::Index m = embedding.size();
  const Eigen::Index n = m / 2 + 1;
  if (v.size() != n) fail(ErrorKind::InvalidInput, "toeplitz_matvec: vector length must be T+1");
  VectorXd padded = VectorXd::Zero(m);
  padded.head(n) = v;
  return circulant_matvec(embedding, padded).head(n);
}

struct CirculantSolve {
  double logdet;
  VectorXd solution;
};

/// log-determinant and solve for a symmetric positive-definite circulant, O(n log n).
/// Throws SingularEmbedding when an eigenvalue is not safely positive; the caller
/// is expected to fall back to a dense factorization.
inline CirculantSolve circulant_logdet_solve(const CirculantSpec& spec, const VectorXd& rhs) {
  if (rhs.size() != spec.size()) fail(ErrorKind::InvalidInput, "circulant_logdet_solve: size mismatch");
  const auto& eig = spec.eigenvalues();
  const double tol = detail::singular_tolerance(eig);
  double logdet = 0.0;
  for (const auto& e : eig) {
    if (!(e.real() > tol) || std::abs(e.imag()) > 1e-9 * std::max(1.0, std::abs(e.real()))) {
      fail(ErrorKind::SingularEmbedding, "circulant embedding has a non-positive eigenvalue");
    }
    logdet += std::log(e.real());
  }
  const std::size_t n = static_cast<std::size_t>(rhs.size());
  std::vector<fft::Complex> half(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) half[k] = std::conj(eig[k]);
  return {logdet, detail::apply_half_spectrum(half, rhs, true)};
}

/// Block-circulant embedding of K^T ⊗ K^Y: a scalar temporal circulant sequence
/// plus the task matrix. The (a,b) sub-sequence is the temporal sequence scaled
/// by K^Y(a,b); its eigenvalues are λ_k·K^Y(a,b).
class BlockCirculantSpec {
 public:
  BlockCirculantSpec(CirculantSpec temporal, MatrixXd task)
      : temporal_(std::move(temporal)), task_(std::move(task)) {
    if (task_.rows() != task_.cols()) fail(ErrorKind::InvalidInput, "task matrix must be square");
  }

  static BlockCirculantSpec from_kernel(const MaternKernel& kernel, const MatrixXd& task,
                                        Eigen::Index num_points) {
    return BlockCirculantSpec(embed_circulant(autocovariance(kernel, num_points - 1)), task);
  }

  [[nodiscard]] const CirculantSpec& temporal() const { return temporal_; }
  [[nodiscard]] const MatrixXd& task() const { return task_; }
  [[nodiscard]] Eigen::Index num_features() const { return task_.rows(); }
  [[nodiscard]] Eigen::Index embedding_size() const { return temporal_.size(); }

  [[nodiscard]] std::vector<fft::Complex> pair_eigenvalues(Eigen::Index a, Eigen::Index b) const {
    std::vector<fft::Complex> out = temporal_.eigenvalues();
    for (auto& e : out) e *= task_(a, b);
    return out;
  }

  /// The P×P matrix λ_k·K^Y + D at Fourier index k.
  [[nodiscard]] MatrixXd fourier_block(Eigen::Index k, const VectorXd& noise) const {
    MatrixXd b = temporal_.eigenvalues()[static_cast<std::size_t>(k)].real() * task_;
    b.diagonal() += noise;
    return b;
  }

 private:
  CirculantSpec temporal_;
  MatrixXd task_;
};

/// Result of the FFT likelihood. The value is an approximation: the Toeplitz
/// log-determinant comes from the circulant spectrum plus its asymptotic
/// boundary term, and the quadratic form from a circulant-preconditioned
/// conjugate-gradient solve.
struct FastLoglik {
  double loglik = 0.0;
  int max_cg_iterations = 0;
  static constexpr bool approximate = true;
};

namespace detail {

// Σ_{j≥1} j·ĉ_j² where ĉ is the cepstrum of a positive symbol sampled at the
// M Fourier frequencies: the strong-Szegő correction to M⁻¹N·Σ log g_k.
inline double szego_boundary_term(const std::vector<double>& log_symbol) {
  const std::size_t m = log_symbol.size();
  std::vector<fft::Complex> spec(m / 2 + 1);
  fft::dft_half(log_symbol, spec);
  double acc = 0.0;
  for (std::size_t j = 1; j < m / 2; ++j) {
    const double cj = spec[j].real() / static_cast<double>(m);
    acc += static_cast<double>(j) * cj * cj;
  }
  return acc;
}

// Solves (s·T + I) x = y with T the embedded Toeplitz matrix, preconditioned by the
// restriction of the circulant inverse (s·C̃ + I)⁻¹.
inline VectorXd toeplitz_pcg(const std::vector<fft::Complex>& temporal_half, double scale,
                             const VectorXd& y, int& iterations) {
  const Eigen::Index n = y.size();
  const Eigen::Index m = 2 * (n - 1);
  std::vector<fft::Complex> op_half(temporal_half.size());
  for (std::size_t k = 0; k < op_half.size(); ++k) op_half[k] = scale * temporal_half[k] + 1.0;

  auto apply_a = [&](const VectorXd& v) {
    VectorXd padded = VectorXd::Zero(m);
    padded.head(n) = v;
    return VectorXd(scale * apply_half_spectrum(temporal_half, padded, false).head(n) + v);
  };
  auto apply_precond = [&](const VectorXd& r) {
    VectorXd padded = VectorXd::Zero(m);
    padded.head(n) = r;
    return VectorXd(apply_half_spectrum(op_half, padded, true).head(n));
  };

  VectorXd x = apply_precond(y);
  VectorXd r = y - apply_a(x);
  VectorXd z = apply_precond(r);
  VectorXd p = z;
  double rz = r.dot(z);
  const double stop = 1e-13 * y.norm();
  iterations = 0;
  for (Eigen::Index it = 0; it < 4 * n + 10 && r.norm() > stop; ++it) {
    const VectorXd ap = apply_a(p);
    const double alpha = rz / p.dot(ap);
    x += alpha * p;
    r -= alpha * ap;
    z = apply_precond(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
    ++iterations;
  }
  return x;
}

}  // namespace detail

/// Gaussian log-density of a fully observed, uniformly sampled segment of
/// residuals (rows = time, columns = features) under K^Y ⊗ K^T + D ⊗ I, evaluated
/// through the block-circulant embedding in O(P²·T log T).
inline FastLoglik fast_segment_loglik(const BlockCirculantSpec& spec, const VectorXd& noise,
                                      const MatrixXd& residuals) {
  const Eigen::Index n = residuals.rows();
  const Eigen::Index p = residuals.cols();
  if (p != spec.num_features() || noise.size() != p) {
    fail(ErrorKind::InvalidInput, "fast_segment_loglik: feature count mismatch");
  }
  if (n < 2 || spec.embedding_size() != 2 * (n - 1)) {
    fail(ErrorKind::InvalidInput, "fast_segment_loglik: embedding does not match segment length");
  }
  const auto& eig = spec.temporal().eigenvalues();
  const Eigen::Index m = spec.embedding_size();
  const double tol = detail::singular_tolerance(eig);
  for (const auto& e : eig) {
    if (e.real() < -tol) {
      fail(ErrorKind::SingularEmbedding, "temporal circulant embedding is not positive semi-definite");
    }
  }

  // Joint diagonalization of every Fourier block λ_k K^Y + D.
  const VectorXd inv_sd = noise.array().rsqrt();
  const MatrixXd scaled_task = inv_sd.asDiagonal() * spec.task() * inv_sd.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(scaled_task);
  const VectorXd s = es.eigenvalues();
  const MatrixXd y = residuals * inv_sd.asDiagonal() * es.eigenvectors();

  std::vector<fft::Complex> temporal_half(static_cast<std::size_t>(m / 2 + 1));
  for (std::size_t k = 0; k < temporal_half.size(); ++k) temporal_half[k] = eig[k].real();

  FastLoglik out;
  double logdet = static_cast<double>(n) * noise.array().log().sum();
  double quad = 0.0;
  std::vector<double> log_symbol(static_cast<std::size_t>(m));
  for (Eigen::Index a = 0; a < p; ++a) {
    double sum_log = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      const double g = s[a] * eig[static_cast<std::size_t>(k)].real() + 1.0;
      if (!(g > 1e-12)) {
        fail(ErrorKind::SingularEmbedding, "Fourier-index block is not positive definite");
      }
      log_symbol[static_cast<std::size_t>(k)] = std::log(g);
      sum_log += log_symbol[static_cast<std::size_t>(k)];
    }
    logdet += static_cast<double>(n) / static_cast<double>(m) * sum_log +
              detail::szego_boundary_term(log_symbol);
    int iters = 0;
    const VectorXd ya = y.col(a);
    const VectorXd xa = detail::toeplitz_pcg(temporal_half, s[a], ya, iters);
    quad += ya.dot(xa);
    out.max_cg_iterations = std::max(out.max_cg_iterations, iters);
  }
  out.loglik = -0.5 * (logdet + quad + static_cast<double>(n * p) * kLog2Pi);
  return out;
}

/// Convenience overload building the embedding from the kernel. A single time
/// step has no embedding and is evaluated exactly.
inline FastLoglik fast_segment_loglik(const MaternKernel& kernel, const MatrixXd& task,
                                      const VectorXd& noise, const MatrixXd& residuals) {
  if (residuals.rows() == 1) {
    MatrixXd cov = kernel(0.0) * task;
    cov.diagonal() += noise;
    const auto llt = checked_llt(cov, "single-step segment");
    return {gaussian_logpdf_centered(llt, residuals.row(0).transpose()), 0};
  }
  return fast_segment_loglik(BlockCirculantSpec::from_kernel(kernel, task, residuals.rows()), noise,
                             residuals);
}

}  // namespace sgpmon
