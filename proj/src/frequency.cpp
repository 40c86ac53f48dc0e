#include "freqgrl/frequency.hpp"

#include <algorithm>
#include <cmath>

#include "freqgrl/fft.hpp"
#include "freqgrl/ops.hpp"

namespace freqgrl {

namespace {

struct PlaneLayout {
  std::size_t lead;      // product of dims before the channel axis
  std::size_t channels;  // C of the spatial signal
  std::size_t height;
  std::size_t width;
  std::size_t rows;  // stored spectrum rows
};

PlaneLayout spatial_layout(const Tensor& x, const char* op) {
  if (x.rank() < 3) throw Error(std::string(op) + ": expected [..., C, H, W], got " + shape_str(x.shape()));
  const std::size_t r = x.rank();
  PlaneLayout p{};
  p.channels = x.dim(r - 3);
  p.height = x.dim(r - 2);
  p.width = x.dim(r - 1);
  if (p.height == 0 || p.width == 0) throw Error(std::string(op) + ": empty spatial dims");
  p.lead = x.numel() / (p.channels * p.height * p.width);
  return p;
}

Shape spectrum_shape(const Shape& spatial, std::size_t rows) {
  Shape s = spatial;
  const std::size_t r = s.size();
  s[r - 3] *= 2;
  s[r - 2] = rows;
  return s;
}

// Forward transform of every plane, keeping the first `rows` rows.
void forward_planes(const PlaneLayout& p, std::span<const Real> x, std::span<Real> out) {
  const std::size_t hw = p.height * p.width, rw = p.rows * p.width;
  std::vector<Complex> plane(hw);
  for (std::size_t l = 0; l < p.lead; ++l)
    for (std::size_t c = 0; c < p.channels; ++c) {
      const Real* src = x.data() + (l * p.channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) plane[i] = Complex(src[i], 0);
      fft2d(plane, p.height, p.width, false);
      Real* re = out.data() + (l * 2 * p.channels + c) * rw;
      Real* im = out.data() + (l * 2 * p.channels + p.channels + c) * rw;
      for (std::size_t i = 0; i < rw; ++i) {
        re[i] = plane[i].real();
        im[i] = plane[i].imag();
      }
    }
}

// Adjoint of forward_planes: dx = Re(sum over stored bins of G e^{+i theta}).
void forward_planes_adjoint(const PlaneLayout& p, std::span<const Real> g, std::span<Real> dx) {
  const std::size_t hw = p.height * p.width, rw = p.rows * p.width;
  std::vector<Complex> plane(hw);
  for (std::size_t l = 0; l < p.lead; ++l)
    for (std::size_t c = 0; c < p.channels; ++c) {
      const Real* re = g.data() + (l * 2 * p.channels + c) * rw;
      const Real* im = g.data() + (l * 2 * p.channels + p.channels + c) * rw;
      std::fill(plane.begin(), plane.end(), Complex(0, 0));
      for (std::size_t i = 0; i < rw; ++i) plane[i] = Complex(re[i], im[i]);
      fft2d(plane, p.height, p.width, true);
      Real* dst = dx.data() + (l * p.channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = plane[i].real();
    }
}

// Multiplicity of a stored half-spectrum row in the full spectrum.
Real row_weight(std::size_t u, std::size_t h) {
  if (u == 0) return Real(1);
  if (h % 2 == 0 && u == h / 2) return Real(1);
  return Real(2);
}

// Inverse of every plane. For half spectra the missing rows are filled by
// conjugate symmetry. Returns the largest discarded imaginary magnitude.
Real inverse_planes(const PlaneLayout& p, bool half, std::span<const Real> spec, std::span<Real> out) {
  const std::size_t hw = p.height * p.width, rw = p.rows * p.width;
  const Real inv = Real(1) / static_cast<Real>(hw);
  std::vector<Complex> plane(hw);
  Real residue = 0;
  for (std::size_t l = 0; l < p.lead; ++l)
    for (std::size_t c = 0; c < p.channels; ++c) {
      const Real* re = spec.data() + (l * 2 * p.channels + c) * rw;
      const Real* im = spec.data() + (l * 2 * p.channels + p.channels + c) * rw;
      for (std::size_t i = 0; i < rw; ++i) plane[i] = Complex(re[i], im[i]);
      if (half) {
        for (std::size_t u = p.rows; u < p.height; ++u)
          for (std::size_t v = 0; v < p.width; ++v) {
            const std::size_t mu = p.height - u, mv = (p.width - v) % p.width;
            plane[u * p.width + v] = std::conj(plane[mu * p.width + mv]);
          }
      }
      fft2d(plane, p.height, p.width, true);
      Real* dst = out.data() + (l * p.channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        dst[i] = plane[i].real() * inv;
        residue = std::max(residue, std::abs(plane[i].imag() * inv));
      }
    }
  return residue;
}

// Adjoint of inverse_planes: dX(u,v) = weight(u) * FFT(g)(u,v) / (H W).
void inverse_planes_adjoint(const PlaneLayout& p, bool half, std::span<const Real> g, std::span<Real> dspec) {
  const std::size_t hw = p.height * p.width, rw = p.rows * p.width;
  const Real inv = Real(1) / static_cast<Real>(hw);
  std::vector<Complex> plane(hw);
  for (std::size_t l = 0; l < p.lead; ++l)
    for (std::size_t c = 0; c < p.channels; ++c) {
      const Real* src = g.data() + (l * p.channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) plane[i] = Complex(src[i], 0);
      fft2d(plane, p.height, p.width, false);
      Real* re = dspec.data() + (l * 2 * p.channels + c) * rw;
      Real* im = dspec.data() + (l * 2 * p.channels + p.channels + c) * rw;
      for (std::size_t u = 0; u < p.rows; ++u) {
        const Real wgt = half ? row_weight(u, p.height) * inv : inv;
        for (std::size_t v = 0; v < p.width; ++v) {
          re[u * p.width + v] = plane[u * p.width + v].real() * wgt;
          im[u * p.width + v] = plane[u * p.width + v].imag() * wgt;
        }
      }
    }
}

Tensor forward_view(const Tensor& x, bool half, const char* op) {
  PlaneLayout p = spatial_layout(x, op);
  p.rows = half ? half_rows(p.height) : p.height;
  Tensor out = Tensor::zeros(spectrum_shape(x.shape(), p.rows));
  forward_planes(p, x.data(), out.mutable_data());
  if (detail::should_record({&x})) {
    detail::record(out, {x}, [x, p](std::span<const Real> g) {
      std::vector<Real> dx(x.numel());
      forward_planes_adjoint(p, g, dx);
      detail::accumulate_grad(x, dx);
    });
  }
  return out;
}

Tensor inverse_view(const Tensor& spec, std::size_t height, bool half, const char* op) {
  if (spec.rank() < 3) throw Error(std::string(op) + ": expected [..., 2C, rows, W], got " + shape_str(spec.shape()));
  const std::size_t r = spec.rank();
  if (spec.dim(r - 3) % 2 != 0) throw Error(std::string(op) + ": channel axis must hold real and imaginary blocks");
  PlaneLayout p{};
  p.channels = spec.dim(r - 3) / 2;
  p.rows = spec.dim(r - 2);
  p.width = spec.dim(r - 1);
  p.height = height;
  if (p.channels == 0 || p.width == 0 || height == 0) throw Error(std::string(op) + ": empty spectrum");
  if (p.rows != (half ? half_rows(height) : height)) {
    throw Error(std::string(op) + ": " + std::to_string(p.rows) + " rows inconsistent with height " +
                std::to_string(height));
  }
  p.lead = spec.numel() / (2 * p.channels * p.rows * p.width);
  Shape out_shape = spec.shape();
  out_shape[r - 3] = p.channels;
  out_shape[r - 2] = height;
  Tensor out = Tensor::zeros(out_shape);
  const Real residue = inverse_planes(p, half, spec.data(), out.mutable_data());
  if (!half) {
    Real peak = 1;
    for (Real v : out.data()) peak = std::max(peak, std::abs(v));
    if (residue > Real(1e-6) * peak) {
      throw Error(std::string(op) + ": imaginary residue " + std::to_string(residue) +
                  " (spectrum is not conjugate-symmetric)");
    }
  }
  if (detail::should_record({&spec})) {
    detail::record(out, {spec}, [spec, p, half](std::span<const Real> g) {
      std::vector<Real> d(spec.numel());
      inverse_planes_adjoint(p, half, g, d);
      detail::accumulate_grad(spec, d);
    });
  }
  return out;
}

void require_full(const Spectrum& s, const char* op) {
  if (s.layout != SpectrumLayout::Full) throw Error(std::string(op) + ": requires a full-layout spectrum");
}

}  // namespace

Tensor fft2_view(const Tensor& x) { return forward_view(x, false, "fft2"); }
Tensor rfft2_view(const Tensor& x) { return forward_view(x, true, "rfft2"); }

Tensor ifft2_view(const Tensor& spectrum) {
  if (spectrum.rank() < 3) throw Error("ifft2: expected [..., 2C, H, W]");
  return inverse_view(spectrum, spectrum.dim(spectrum.rank() - 2), false, "ifft2");
}

Tensor irfft2_view(const Tensor& spectrum, std::size_t height) { return inverse_view(spectrum, height, true, "irfft2"); }

// ---------------------------------------------------------------- Spectrum

std::size_t Spectrum::channels() const { return values.dim(values.rank() - 3) / 2; }

Tensor Spectrum::real() const { return slice(values, values.rank() - 3, 0, channels()); }

Tensor Spectrum::imag() const { return slice(values, values.rank() - 3, channels(), 2 * channels()); }

Spectrum fft2(const Tensor& x) {
  return {SpectrumLayout::Full, false, x.dim(x.rank() - 2), x.dim(x.rank() - 1), fft2_view(x)};
}

Tensor ifft2(const Spectrum& s) {
  require_full(s, "ifft2");
  return ifft2_view(s.centered ? uncenter(s).values : s.values);
}

Spectrum rfft2(const Tensor& x) {
  return {SpectrumLayout::Half, false, x.dim(x.rank() - 2), x.dim(x.rank() - 1), rfft2_view(x)};
}

Tensor irfft2(const Spectrum& s) {
  if (s.layout != SpectrumLayout::Half) throw Error("irfft2: requires a half-layout spectrum");
  return irfft2_view(s.values, s.height);
}

Spectrum expand_to_full(const Spectrum& half) {
  if (half.layout != SpectrumLayout::Half) throw Error("expand_to_full: input is not a half spectrum");
  const std::size_t h = half.height, w = half.width, rows = half.rows(), c = half.channels();
  Shape shape = half.values.shape();
  shape[shape.size() - 2] = h;
  Tensor full = Tensor::zeros(shape);
  const std::size_t lead = half.values.numel() / (2 * c * rows * w);
  auto src = half.values.data();
  auto dst = full.mutable_data();
  for (std::size_t l = 0; l < lead; ++l)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Real* re = src.data() + (l * 2 * c + ch) * rows * w;
      const Real* im = src.data() + (l * 2 * c + c + ch) * rows * w;
      Real* ore = dst.data() + (l * 2 * c + ch) * h * w;
      Real* oim = dst.data() + (l * 2 * c + c + ch) * h * w;
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
          if (u < rows) {
            ore[u * w + v] = re[u * w + v];
            oim[u * w + v] = im[u * w + v];
          } else {
            const std::size_t mu = h - u, mv = (w - v) % w;
            ore[u * w + v] = re[mu * w + mv];
            oim[u * w + v] = -im[mu * w + mv];
          }
        }
    }
  return {SpectrumLayout::Full, false, h, w, full};
}

Spectrum center(const Spectrum& s) {
  require_full(s, "center");
  if (s.centered) return s;
  return {s.layout, true, s.height, s.width,
          roll2d(s.values, static_cast<std::ptrdiff_t>(s.height / 2), static_cast<std::ptrdiff_t>(s.width / 2))};
}

Spectrum uncenter(const Spectrum& s) {
  require_full(s, "uncenter");
  if (!s.centered) return s;
  return {s.layout, false, s.height, s.width,
          roll2d(s.values, -static_cast<std::ptrdiff_t>(s.height / 2), -static_cast<std::ptrdiff_t>(s.width / 2))};
}

Real spectrum_energy(const Spectrum& s) {
  Real e = 0;
  for (Real v : s.values.data()) e += v * v;
  return e;
}

// ---------------------------------------------------------------- masks

std::size_t FrequencyMask::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += b;
  return n;
}

std::vector<Real> FrequencyMask::centered_values() const { return {bits.begin(), bits.end()}; }

std::vector<Real> FrequencyMask::uncentered() const {
  std::vector<Real> out(height * width);
  for (std::size_t u = 0; u < height; ++u)
    for (std::size_t v = 0; v < width; ++v)
      out[u * width + v] = at((u + height / 2) % height, (v + width / 2) % width);
  return out;
}

FrequencyMask make_mask(std::size_t height, std::size_t width, Real radius, Polarity polarity) {
  if (!(radius >= 0)) throw Error("make_mask: radius must be non-negative");
  if (height == 0 || width == 0) throw Error("make_mask: empty grid");
  FrequencyMask m{height, width, radius, polarity, std::vector<std::uint8_t>(height * width)};
  const auto ch = static_cast<std::ptrdiff_t>(height / 2), cw = static_cast<std::ptrdiff_t>(width / 2);
  for (std::size_t u = 0; u < height; ++u)
    for (std::size_t v = 0; v < width; ++v) {
      const auto du = std::abs(static_cast<std::ptrdiff_t>(u) - ch);
      const auto dv = std::abs(static_cast<std::ptrdiff_t>(v) - cw);
      const bool low = static_cast<Real>(std::max(du, dv)) <= radius;
      m.bits[u * width + v] = (low == (polarity == Polarity::Low)) ? 1 : 0;
    }
  return m;
}

std::pair<Spectrum, Spectrum> decompose(const Spectrum& s, const FrequencyMask& mask) {
  require_full(s, "decompose");
  if (mask.height != s.height || mask.width != s.width) {
    throw Error("decompose: mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                " does not match spectrum " + std::to_string(s.height) + "x" + std::to_string(s.width));
  }
  const Spectrum c = center(s);
  std::vector<Real> keep = mask.centered_values();
  std::vector<Real> rest(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) rest[i] = Real(1) - keep[i];
  Spectrum low{SpectrumLayout::Full, true, s.height, s.width, mul_const(c.values, keep)};
  Spectrum high{SpectrumLayout::Full, true, s.height, s.width, mul_const(c.values, rest)};
  return {low, high};
}

// ---------------------------------------------------------------- bands

Real normalized_radius(std::size_t u, std::size_t v, std::size_t h, std::size_t w) {
  const Real unit = static_cast<Real>(std::min(h, w)) / Real(2);
  return static_cast<Real>(chebyshev_from_dc(u, v, h, w)) / unit;
}

bool in_band(Real d, Real lo, Real hi) { return d >= lo && (hi >= Real(1) || d < hi); }

std::vector<Real> band_pattern_half(std::size_t h, std::size_t w, Real lo, Real hi) {
  const std::size_t rows = half_rows(h);
  std::vector<Real> out(rows * w);
  for (std::size_t u = 0; u < rows; ++u)
    for (std::size_t v = 0; v < w; ++v) out[u * w + v] = in_band(normalized_radius(u, v, h, w), lo, hi) ? 1 : 0;
  return out;
}

std::vector<Real> band_pattern_full(std::size_t h, std::size_t w, Real lo, Real hi) {
  std::vector<Real> out(h * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) out[u * w + v] = in_band(normalized_radius(u, v, h, w), lo, hi) ? 1 : 0;
  return out;
}

std::pair<Tensor, Tensor> split_by_radius(const Tensor& x, Real radius) {
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  std::vector<Real> low(h * w), high(h * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      const bool in = static_cast<Real>(chebyshev_from_dc(u, v, h, w)) <= radius;
      low[u * w + v] = in ? 1 : 0;
      high[u * w + v] = in ? 0 : 1;
    }
  const Tensor spec = fft2_view(x);
  return {ifft2_view(mul_const(spec, low)), ifft2_view(mul_const(spec, high))};
}

Tensor band_reconstruct(const Tensor& x, Real lo_frac, Real hi_frac, bool clamp) {
  if (!(lo_frac >= 0 && lo_frac < hi_frac && hi_frac <= 1)) {
    throw Error("band_reconstruct: need 0 <= lo < hi <= 1");
  }
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::vector<Real> pattern = band_pattern_full(h, w, lo_frac, hi_frac);
  if (std::none_of(pattern.begin(), pattern.end(), [](Real v) { return v != 0; })) {
    throw Error("band_reconstruct: band selects no frequency bins");
  }
  Tensor out = ifft2_view(mul_const(fft2_view(x), pattern));
  if (clamp) {
    auto in = x.data();
    const auto [lo_it, hi_it] = std::minmax_element(in.begin(), in.end());
    const Real lo = *lo_it, hi = *hi_it;
    for (auto& v : out.mutable_data()) v = std::clamp(v, lo, hi);
  }
  return out;
}

std::vector<Real> log_magnitude_centered(const Tensor& image) {
  PlaneLayout p = spatial_layout(image, "log_magnitude_centered");
  const std::size_t h = p.height, w = p.width, planes = p.lead * p.channels;
  std::vector<Real> out(h * w, Real(0));
  std::vector<Complex> plane(h * w);
  auto x = image.data();
  for (std::size_t k = 0; k < planes; ++k) {
    for (std::size_t i = 0; i < h * w; ++i) plane[i] = Complex(x[k * h * w + i], 0);
    fft2d(plane, h, w, false);
    for (std::size_t u = 0; u < h; ++u)
      for (std::size_t v = 0; v < w; ++v) {
        const std::size_t cu = (u + h / 2) % h, cv = (v + w / 2) % w;
        out[cu * w + cv] += std::log1p(std::abs(plane[u * w + v])) / static_cast<Real>(planes);
      }
  }
  return out;
}

}  // namespace freqgrl
