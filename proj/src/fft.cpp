#include "freqgrl/fft.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace freqgrl {

namespace {

constexpr std::size_t kMaxRadix = 13;

inline Complex cmul(Complex a, Complex b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

// exp(-2 pi i k / n) with exact values on quarter turns, so that constant
// inputs to power-of-two transforms produce exact zeros off DC.
Complex unit_root(std::size_t k, std::size_t n) {
  k %= n;
  if ((4 * k) % n == 0) {
    switch ((4 * k) / n) {
      case 0: return {1, 0};
      case 1: return {0, -1};
      case 2: return {-1, 0};
      default: return {0, 1};
    }
  }
  const long double angle = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>(k) / static_cast<long double>(n);
  return {static_cast<Real>(std::cos(angle)), static_cast<Real>(std::sin(angle))};
}

std::vector<std::size_t> factorize(std::size_t n) {
  std::vector<std::size_t> out;
  std::size_t p = 4;
  while (n > 1) {
    while (n % p) {
      switch (p) {
        case 4: p = 2; break;
        case 2: p = 3; break;
        default: p += 2; break;
      }
      if (p * p > n) p = n;
    }
    n /= p;
    out.push_back(p);
    out.push_back(n);
  }
  return out;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t m = 1;
  while (m < n) m <<= 1;
  return m;
}

}  // namespace

FftPlan::FftPlan(std::size_t n, bool force_bluestein) : n_(n) {
  if (n == 0) throw Error("FftPlan: length must be positive");
  factors_ = factorize(n);
  bool small = true;
  for (std::size_t i = 0; i < factors_.size(); i += 2) small = small && factors_[i] <= kMaxRadix;
  algorithm_ = (small && !force_bluestein) ? Algorithm::MixedRadix : Algorithm::Bluestein;

  if (algorithm_ == Algorithm::MixedRadix) {
    twiddles_.resize(n);
    for (std::size_t k = 0; k < n; ++k) twiddles_[k] = unit_root(k, n);
    return;
  }

  // Bluestein: X_k = w_k * sum_j (x_j w_j) conj(w_{k-j}), w_k = exp(-i pi k^2/n).
  const std::size_t m = next_pow2(2 * n - 1);
  chirp_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t k2 = (k * k) % (2 * n);
    chirp_[k] = unit_root(k2, 2 * n);
  }
  inner_ = std::make_unique<FftPlan>(m);
  kernel_spectrum_.assign(m, Complex(0, 0));
  kernel_spectrum_[0] = std::conj(chirp_[0]);
  for (std::size_t k = 1; k < n; ++k) kernel_spectrum_[k] = kernel_spectrum_[m - k] = std::conj(chirp_[k]);
  inner_->forward(kernel_spectrum_);
}

void FftPlan::forward(std::span<Complex> data) const {
  if (data.size() != n_) throw Error("FftPlan: buffer length mismatch");
  if (n_ == 1) return;
  if (algorithm_ == Algorithm::MixedRadix)
    mixed_radix(data);
  else
    bluestein(data);
}

void FftPlan::inverse(std::span<Complex> data) const {
  for (auto& v : data) v = std::conj(v);
  forward(data);
  for (auto& v : data) v = std::conj(v);
}

void FftPlan::mixed_radix(std::span<Complex> data) const {
  static thread_local std::vector<Complex> in;
  in.assign(data.begin(), data.end());
  work(data.data(), in.data(), 1, factors_.data());
}

// Decimation in time: out[k*m .. ] holds the length-m sub-transforms of the
// p interleaved subsequences, then a generic radix-p butterfly combines them.
void FftPlan::work(Complex* out, const Complex* in, std::size_t fstride, const std::size_t* factors) const {
  const std::size_t p = factors[0];
  const std::size_t m = factors[1];
  Complex* const out_begin = out;
  if (m == 1) {
    for (std::size_t k = 0; k < p; ++k) out[k] = in[k * fstride];
  } else {
    for (std::size_t k = 0; k < p; ++k) work(out + k * m, in + k * fstride, fstride * p, factors + 2);
  }
  if (p == 2) {
    for (std::size_t u = 0; u < m; ++u) {
      const Complex t = cmul(out_begin[u + m], twiddles_[u * fstride]);
      out_begin[u + m] = out_begin[u] - t;
      out_begin[u] += t;
    }
    return;
  }
  if (p == 4) {
    for (std::size_t u = 0; u < m; ++u) {
      const Complex a0 = out_begin[u];
      const Complex a1 = cmul(out_begin[u + m], twiddles_[u * fstride]);
      const Complex a2 = cmul(out_begin[u + 2 * m], twiddles_[2 * u * fstride]);
      const Complex a3 = cmul(out_begin[u + 3 * m], twiddles_[3 * u * fstride]);
      const Complex s02 = a0 + a2, d02 = a0 - a2, s13 = a1 + a3, d13 = a1 - a3;
      const Complex rot(d13.imag(), -d13.real());  // -i * d13
      out_begin[u] = s02 + s13;
      out_begin[u + m] = d02 + rot;
      out_begin[u + 2 * m] = s02 - s13;
      out_begin[u + 3 * m] = d02 - rot;
    }
    return;
  }
  Complex scratch[kMaxRadix];
  for (std::size_t u = 0; u < m; ++u) {
    std::size_t k = u;
    for (std::size_t q = 0; q < p; ++q, k += m) scratch[q] = out_begin[k];
    k = u;
    for (std::size_t q1 = 0; q1 < p; ++q1, k += m) {
      std::size_t tw = 0;
      Complex acc = scratch[0];
      for (std::size_t q = 1; q < p; ++q) {
        tw += fstride * k;
        if (tw >= n_) tw %= n_;
        acc += cmul(scratch[q], twiddles_[tw]);
      }
      out_begin[k] = acc;
    }
  }
}

void FftPlan::bluestein(std::span<Complex> data) const {
  const std::size_t m = inner_->size();
  std::vector<Complex> a(m, Complex(0, 0));
  for (std::size_t k = 0; k < n_; ++k) a[k] = cmul(data[k], chirp_[k]);
  inner_->forward(a);
  for (std::size_t k = 0; k < m; ++k) a[k] = cmul(a[k], kernel_spectrum_[k]);
  inner_->inverse(a);
  const Real inv_m = Real(1) / static_cast<Real>(m);
  for (std::size_t k = 0; k < n_; ++k) data[k] = cmul(a[k], chirp_[k]) * inv_m;
}

const FftPlan& fft_plan(std::size_t n) {
  static thread_local std::map<std::size_t, const FftPlan*> local;
  if (auto it = local.find(n); it != local.end()) return *it->second;
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<FftPlan>(n);
  local.emplace(n, slot.get());
  return *slot;
}

void fft2d(std::span<Complex> plane, std::size_t h, std::size_t w, bool inverse) {
  if (plane.size() != h * w) throw Error("fft2d: plane size mismatch");
  const FftPlan& row_plan = fft_plan(w);
  const FftPlan& col_plan = fft_plan(h);
  for (std::size_t r = 0; r < h; ++r) {
    auto row = plane.subspan(r * w, w);
    inverse ? row_plan.inverse(row) : row_plan.forward(row);
  }
  static thread_local std::vector<Complex> col;
  col.resize(h);
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) col[r] = plane[r * w + c];
    inverse ? col_plan.inverse(col) : col_plan.forward(col);
    for (std::size_t r = 0; r < h; ++r) plane[r * w + c] = col[r];
  }
}

}  // namespace freqgrl
