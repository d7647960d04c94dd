#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include <fftw3.h>

namespace sgpmon::fft {

using Complex = std::complex<double>;

namespace detail {

// FFTW's planner is not thread-safe; execution on distinct buffers is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealPlan {
 public:
  explicit RealPlan(std::size_t n) : n_(n) {
    real_ = fftw_alloc_real(n);
    spec_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_, spec_, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec_, real_, FFTW_ESTIMATE);
  }
  RealPlan(const RealPlan&) = delete;
  RealPlan& operator=(const RealPlan&) = delete;
  ~RealPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
    fftw_free(real_);
    fftw_free(spec_);
  }

  [[nodiscard]] std::size_t size() const { return n_; }
  double* real() { return real_; }
  fftw_complex* spectrum() { return spec_; }
  void forward() { fftw_execute(forward_); }
  void backward() { fftw_execute(backward_); }

 private:
  std::size_t n_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

inline RealPlan& plan_for(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<RealPlan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealPlan>(n);
  return *slot;
}

}  // namespace detail

/// Full DFT X_k = Σ_j x_j e^{-2πijk/n} of a real sequence.
inline std::vector<Complex> dft(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<Complex> out(n);
  if (n == 0) return out;
  auto& plan = detail::plan_for(n);
  std::copy(x.begin(), x.end(), plan.real());
  plan.forward();
  const fftw_complex* s = plan.spectrum();
  for (std::size_t k = 0; k <= n / 2; ++k) out[k] = Complex(s[k][0], s[k][1]);
  for (std::size_t k = n / 2 + 1; k < n; ++k) out[k] = std::conj(out[n - k]);
  return out;
}

/// Half spectrum (indices 0..n/2) of a real sequence.
inline void dft_half(std::span<const double> x, std::span<Complex> half) {
  const std::size_t n = x.size();
  auto& plan = detail::plan_for(n);
  std::copy(x.begin(), x.end(), plan.real());
  plan.forward();
  const fftw_complex* s = plan.spectrum();
  for (std::size_t k = 0; k <= n / 2; ++k) half[k] = Complex(s[k][0], s[k][1]);
}

/// Inverse of dft_half for a Hermitian spectrum; returns the real sequence of length n.
inline void idft_half(std::span<const Complex> half, std::span<double> x) {
  const std::size_t n = x.size();
  auto& plan = detail::plan_for(n);
  fftw_complex* s = plan.spectrum();
  for (std::size_t k = 0; k <= n / 2; ++k) {
    s[k][0] = half[k].real();
    s[k][1] = half[k].imag();
  }
  plan.backward();
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) x[j] = plan.real()[j] * scale;
}

}  // namespace sgpmon::fft
