#pragma once

#include <string>
#include <vector>

#include "freqgrl/episode.hpp"
#include "freqgrl/rng.hpp"
#include "freqgrl/tensor.hpp"

namespace freqgrl {

enum class ReplaceMode { Lfr, Hfr };

enum class Pairing {
  /// i-th image of class position c pairs with the i-th target image of the
  /// same position (support first, then queries). Sizes must agree.
  IndexAligned,
  /// As IndexAligned, but the target sequence of each class is reused
  /// cyclically, so a large source task can pair with a small target task.
  Cyclic,
  /// Every source image pairs with a uniformly drawn image of the target task.
  RandomWithinTask,
};

std::string to_string(ReplaceMode mode);
std::string to_string(Pairing pairing);
ReplaceMode parse_replace_mode(const std::string& s);
Pairing parse_pairing(const std::string& s);

struct GammaDist {
  enum class Kind { Fixed, Uniform } kind = Kind::Uniform;
  Real a = 0;
  Real b = Real(0.2);

  static GammaDist fixed(Real g) { return {Kind::Fixed, g, g}; }
  static GammaDist uniform(Real lo, Real hi) { return {Kind::Uniform, lo, hi}; }
  Real sample(Rng& rng) const;
  std::string describe() const;
};

struct LfrConfig {
  GammaDist gamma;
  ReplaceMode mode = ReplaceMode::Lfr;
  Pairing pairing = Pairing::Cyclic;

  void validate() const;
};

/// r = gamma * min(H, W) with gamma drawn from cfg.gamma.
Real sample_radius(const LfrConfig& cfg, std::size_t height, std::size_t width, Rng& rng);

/// Per-image spectrum fusion of [B,C,H,W] batches. Lfr takes the bins with
/// Chebyshev distance <= radius from `tar` and the rest from `src`; Hfr does
/// the opposite. The result is clamped to [0,1] when `clamp` is set.
Tensor replace_band(const Tensor& src, const Tensor& tar, Real radius, ReplaceMode mode, bool clamp = true);

struct LfrProvenance {
  Real gamma = 0;
  Real radius = 0;
  ReplaceMode mode = ReplaceMode::Lfr;
  Pairing pairing = Pairing::Cyclic;
  /// For each source image (support then query), the target image index in
  /// the same order over the target task.
  std::vector<std::size_t> pairs;
};

/// Pseudo source task: source labels and structure, fused images. One radius
/// per episode.
Episode apply_lfr(const Episode& src, const Episode& tar, const LfrConfig& cfg, Rng& rng,
                  LfrProvenance* provenance = nullptr);
/// Same with an explicit radius (pixels).
Episode apply_lfr_radius(const Episode& src, const Episode& tar, Real radius, ReplaceMode mode, Pairing pairing,
                         Rng& rng, LfrProvenance* provenance = nullptr, bool clamp = true);

}  // namespace freqgrl
