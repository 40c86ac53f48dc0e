#pragma once

#include <string>
#include <vector>

#include "freqgrl/checkpoint.hpp"
#include "freqgrl/ops.hpp"
#include "freqgrl/rng.hpp"

namespace freqgrl {

/// N(0, 2/fan_in) initialization.
Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng);

enum class HfeInput {
  Freq,           // convolve the masked half spectrum, then inverse transform
  SpatialMasked,  // inverse transform the masked spectrum, convolve spatially
  SpatialRaw,     // convolve the unmasked input spatially
};

std::string to_string(HfeInput input);
HfeInput parse_hfe_input(const std::string& s);

struct HfeConfig {
  Real band_lo = Real(0.5);
  Real band_hi = Real(1.0);
  HfeInput input = HfeInput::Freq;

  void validate() const;
};

/// Multiply-accumulate counts of a conv stack.
struct MacCount {
  std::size_t conv3x3 = 0;
  std::size_t conv1x1 = 0;
  std::size_t total() const { return conv3x3 + conv1x1; }
};

/// MACs of a 3x3 (same padding) plus 1x1 conv pair of width cin -> cout on an
/// h x w map.
MacCount conv_pair_macs(std::size_t cin, std::size_t cout, std::size_t h, std::size_t w);

/// High-frequency enhancement branch added to a residual block's output:
///   out = f_res + BN(iFFT(theta(rFFT(f_prev) * M_high)))
/// theta = conv3x3 -> BN -> ReLU -> conv1x1 over the 2C-channel real view.
class HfeLayer {
 public:
  HfeLayer(std::size_t channels, std::size_t height, std::size_t width, HfeConfig cfg, Rng& rng);

  Tensor forward(const Tensor& f_prev, const Tensor& f_res, BnMode mode);
  /// The term added to f_res.
  Tensor branch(const Tensor& f_prev, BnMode mode);
  /// rFFT(f_prev) with bins outside the band zeroed, [B, 2C, H/2+1, W].
  Tensor masked_spectrum(const Tensor& f_prev) const;
  MacCount macs() const;

  const HfeConfig& config() const { return cfg_; }
  std::size_t width() const { return conv_width_; }

  void collect_parameters(const std::string& prefix, NamedTensors& out);
  void collect_buffers(const std::string& prefix, NamedTensors& out);

  Tensor conv1_w, bn1_gamma, bn1_beta, conv2_w, conv2_b, post_gamma, post_beta;
  BatchNormState bn1, post_bn;

 private:
  void check_input(const Tensor& f, const char* what) const;

  std::size_t channels_, height_, width_, conv_width_;
  HfeConfig cfg_;
  std::vector<Real> band_;
};

/// Learnable per-bin complex gain on the half spectrum:
///   out = irFFT(rFFT(f) * W),  W = Wr + i Wi stored as [2C, H/2+1, W].
/// Initialized to Wr = 1, Wi = 0, i.e. the identity.
class GffLayer {
 public:
  GffLayer(std::size_t channels, std::size_t height, std::size_t width);

  Tensor forward(const Tensor& f) const;
  void collect_parameters(const std::string& prefix, NamedTensors& out);

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  Tensor weights;

 private:
  std::size_t channels_, height_, width_;
};

/// Channel mean of |W| per bin, min-max normalized to [0,1]; a constant map
/// becomes all zeros. Row-major [H/2+1, W].
std::vector<Real> export_filter_map(const GffLayer& layer);

}  // namespace freqgrl
