#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace sicr::signal {

// Real-input FFT of a fixed length backed by FFTW. Not thread-safe to
// construct concurrently (FFTW planner restriction).
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  std::vector<std::complex<double>> forward(const std::vector<double>& x);
  // Unnormalized inverse: forward followed by inverse scales by n.
  std::vector<double> inverse(const std::vector<std::complex<double>>& spectrum);

 private:
  std::size_t n_;
  double* real_;
  void* complex_;
  void* plan_forward_;
  void* plan_inverse_;
};

}  // namespace sicr::signal
