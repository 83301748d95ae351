#include "sicr/signal/fft.hpp"

#include <fftw3.h>

#include <algorithm>

#include "sicr/errors.hpp"

namespace sicr::signal {

RealFft::RealFft(std::size_t n) : n_(n) {
  if (n < 2) throw ConfigError("FFT length must be at least 2");
  real_ = fftw_alloc_real(n);
  auto* spec = fftw_alloc_complex(n / 2 + 1);
  complex_ = spec;
  plan_forward_ = fftw_plan_dft_r2c_1d(int(n), real_, spec, FFTW_ESTIMATE);
  plan_inverse_ = fftw_plan_dft_c2r_1d(int(n), spec, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  fftw_destroy_plan(static_cast<fftw_plan>(plan_forward_));
  fftw_destroy_plan(static_cast<fftw_plan>(plan_inverse_));
  fftw_free(real_);
  fftw_free(static_cast<fftw_complex*>(complex_));
}

std::vector<std::complex<double>> RealFft::forward(const std::vector<double>& x) {
  if (x.size() != n_) throw ShapeError("FFT input length mismatch");
  std::copy(x.begin(), x.end(), real_);
  fftw_execute(static_cast<fftw_plan>(plan_forward_));
  auto* spec = static_cast<fftw_complex*>(complex_);
  std::vector<std::complex<double>> out(bins());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = {spec[k][0], spec[k][1]};
  return out;
}

std::vector<double> RealFft::inverse(const std::vector<std::complex<double>>& spectrum) {
  if (spectrum.size() != bins()) throw ShapeError("inverse FFT spectrum length mismatch");
  auto* spec = static_cast<fftw_complex*>(complex_);
  for (std::size_t k = 0; k < spectrum.size(); ++k) {
    spec[k][0] = spectrum[k].real();
    spec[k][1] = spectrum[k].imag();
  }
  fftw_execute(static_cast<fftw_plan>(plan_inverse_));
  return std::vector<double>(real_, real_ + n_);
}

}  // namespace sicr::signal
