#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "freqgrl/tensor.hpp"

namespace freqgrl {

// ---------------------------------------------------------------------------
// Differentiable transforms on real views.
//
// Inputs are [..., C, H, W]; spectra are returned as real tensors
// [..., 2C, rows, W] with the C real channels first and the C imaginary
// channels after them. Forward transforms are unnormalized, inverses carry
// the 1/(H*W) factor.
// ---------------------------------------------------------------------------

/// Full complex spectrum, rows = H.
Tensor fft2_view(const Tensor& x);
/// Real part of the inverse of a full spectrum view. Throws when the discarded
/// imaginary residue exceeds 1e-6 (relative to max(1, peak)), which indicates
/// a non-Hermitian spectrum.
Tensor ifft2_view(const Tensor& spectrum);
/// Half spectrum along H: rows = floor(H/2) + 1.
Tensor rfft2_view(const Tensor& x);
/// Inverse of rfft2_view. `height` disambiguates even/odd H. Rows whose
/// mirror lies outside the stored half are reconstructed by conjugate symmetry.
Tensor irfft2_view(const Tensor& spectrum, std::size_t height);

inline std::size_t half_rows(std::size_t height) { return height / 2 + 1; }

// ---------------------------------------------------------------------------
// Spectrum / mask types
// ---------------------------------------------------------------------------

enum class SpectrumLayout { Full, Half };

struct Spectrum {
  SpectrumLayout layout = SpectrumLayout::Full;
  bool centered = false;
  std::size_t height = 0;  // spatial H of the signal
  std::size_t width = 0;
  Tensor values;  // [..., 2C, rows, W]

  std::size_t channels() const;
  std::size_t rows() const { return values.dim(values.rank() - 2); }
  Tensor real() const;
  Tensor imag() const;
};

Spectrum fft2(const Tensor& x);
Tensor ifft2(const Spectrum& s);
Spectrum rfft2(const Tensor& x);
Tensor irfft2(const Spectrum& s);
/// Rebuilds the full uncentered spectrum of a half spectrum.
Spectrum expand_to_full(const Spectrum& half);
/// fftshift: DC moves to (floor(H/2), floor(W/2)).
Spectrum center(const Spectrum& s);
Spectrum uncenter(const Spectrum& s);
/// Sum of squared magnitudes over all stored bins.
Real spectrum_energy(const Spectrum& s);

enum class Polarity { Low, High };

/// Binary mask on the centered grid. A low mask keeps the Chebyshev ball
/// max(|u - floor(H/2)|, |v - floor(W/2)|) <= radius; high is its complement.
struct FrequencyMask {
  std::size_t height = 0;
  std::size_t width = 0;
  Real radius = 0;
  Polarity polarity = Polarity::Low;
  std::vector<std::uint8_t> bits;  // row-major [H, W], centered

  std::uint8_t at(std::size_t u, std::size_t v) const { return bits[u * width + v]; }
  std::size_t count() const;
  /// Same mask in uncentered (DC at 0,0) order, as reals.
  std::vector<Real> uncentered() const;
  std::vector<Real> centered_values() const;
};

FrequencyMask make_mask(std::size_t height, std::size_t width, Real radius, Polarity polarity);

/// Splits a full spectrum into (mask * s, (1 - mask) * s). Uncentered input is
/// centered first; both parts come back centered.
std::pair<Spectrum, Spectrum> decompose(const Spectrum& s, const FrequencyMask& mask);

// ---------------------------------------------------------------------------
// Distance helpers (uncentered bin coordinates)
// ---------------------------------------------------------------------------

/// Chebyshev distance of bin (u, v) from DC, measured on the centered grid.
inline std::size_t chebyshev_from_dc(std::size_t u, std::size_t v, std::size_t h, std::size_t w) {
  const std::size_t du = u < h - u ? u : h - u;
  const std::size_t dv = v < w - v ? v : w - v;
  return du > dv ? du : dv;
}

/// Chebyshev distance in units of min(H, W) / 2.
Real normalized_radius(std::size_t u, std::size_t v, std::size_t h, std::size_t w);

/// Band membership for normalized radius d. The upper edge is exclusive
/// except when hi >= 1, in which case the band extends to the corners.
bool in_band(Real d, Real lo, Real hi);

/// 0/1 pattern over [rows, W] (half layout) or [H, W] (full, uncentered).
std::vector<Real> band_pattern_half(std::size_t h, std::size_t w, Real lo, Real hi);
std::vector<Real> band_pattern_full(std::size_t h, std::size_t w, Real lo, Real hi);

/// Low-pass / high-pass reconstructions of an image [..., C, H, W] split by a
/// Chebyshev radius in pixels. low + high == x up to rounding; no clamping.
std::pair<Tensor, Tensor> split_by_radius(const Tensor& x, Real radius);

/// Keeps bins whose normalized radius lies in [lo_frac, hi_frac) (see
/// in_band), inverse-transforms, and optionally clamps to the input's range.
Tensor band_reconstruct(const Tensor& x, Real lo_frac, Real hi_frac, bool clamp = true);

/// log(1 + |X|) of the centered spectrum averaged over channels, [H, W].
std::vector<Real> log_magnitude_centered(const Tensor& image);

}  // namespace freqgrl
