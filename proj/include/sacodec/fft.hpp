#pragma once

// Real-input FFT helpers backed by FFTW. Plans are created once per size and
// shared; execution uses the new-array interface so concurrent callers are safe.

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "sacodec/error.hpp"

namespace sacodec::fft {

using Complex = std::complex<double>;

class RealPlan {
 public:
  explicit RealPlan(std::size_t n) : n_(n) {
    if (n < 2 || n % 2 != 0) throw Error("fft size must be even and >= 2, got " + std::to_string(n));
    std::vector<double> real(n);
    std::vector<Complex> spec(n / 2 + 1);
    auto* cplx = reinterpret_cast<fftw_complex*>(spec.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real.data(), cplx, flags);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), cplx, real.data(), flags | FFTW_DESTROY_INPUT);
    if (!forward_ || !inverse_) throw Error("fftw planning failed for size " + std::to_string(n));
  }
  ~RealPlan() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }
  RealPlan(const RealPlan&) = delete;
  RealPlan& operator=(const RealPlan&) = delete;

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  // out[k] = sum_n in[n] exp(-2 pi i k n / N), k = 0..N/2
  void forward(std::span<const double> in, std::span<Complex> out) const {
    std::vector<double> buf(in.begin(), in.end());
    fftw_execute_dft_r2c(forward_, buf.data(), reinterpret_cast<fftw_complex*>(out.data()));
  }

  // Unnormalized Hermitian synthesis: out[n] = sum_{k=0}^{N-1} X[k] exp(+2 pi i k n / N)
  // with X extended by conjugate symmetry. Imaginary parts of the DC and
  // Nyquist bins are ignored.
  void inverse_unnormalized(std::span<const Complex> in, std::span<double> out) const {
    std::vector<Complex> buf(in.begin(), in.end());
    buf.front().imag(0.0);
    buf.back().imag(0.0);
    fftw_execute_dft_c2r(inverse_, reinterpret_cast<fftw_complex*>(buf.data()), out.data());
  }

 private:
  std::size_t n_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

inline const RealPlan& plan_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<RealPlan>> plans;
  std::lock_guard lock(mutex);
  auto& slot = plans[n];
  if (!slot) slot = std::make_unique<RealPlan>(n);
  return *slot;
}

}  // namespace sacodec::fft
