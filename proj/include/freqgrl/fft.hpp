#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "freqgrl/tensor.hpp"

namespace freqgrl {

using Complex = std::complex<Real>;

/// One-dimensional complex FFT of a fixed length.
///
/// Lengths whose prime factors are all <= 13 use an iterative mixed-radix
/// Cooley-Tukey decomposition; anything else goes through Bluestein's chirp-z
/// algorithm on a power-of-two convolution. Both directions are unnormalized.
class FftPlan {
 public:
  enum class Algorithm { MixedRadix, Bluestein };

  explicit FftPlan(std::size_t n, bool force_bluestein = false);

  std::size_t size() const { return n_; }
  Algorithm algorithm() const { return algorithm_; }

  /// X[k] = sum_j x[j] exp(-2 pi i jk/n), in place.
  void forward(std::span<Complex> data) const;
  /// x[j] = sum_k X[k] exp(+2 pi i jk/n), in place (no 1/n factor).
  void inverse(std::span<Complex> data) const;

 private:
  void mixed_radix(std::span<Complex> data) const;
  void bluestein(std::span<Complex> data) const;
  void work(Complex* out, const Complex* in, std::size_t fstride, const std::size_t* factors) const;

  std::size_t n_;
  Algorithm algorithm_;
  std::vector<std::size_t> factors_;  // (radix, remaining length) pairs
  std::vector<Complex> twiddles_;
  // Bluestein
  std::vector<Complex> chirp_;
  std::vector<Complex> kernel_spectrum_;
  std::unique_ptr<FftPlan> inner_;
};

/// Cached plan for length n (thread-safe).
const FftPlan& fft_plan(std::size_t n);

/// Unnormalized 2D transform of a row-major [h, w] plane, in place.
void fft2d(std::span<Complex> plane, std::size_t h, std::size_t w, bool inverse);

}  // namespace freqgrl
