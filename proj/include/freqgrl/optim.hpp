#pragma once

#include <vector>

#include "freqgrl/tensor.hpp"

namespace freqgrl {

struct AdamConfig {
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

struct AdamState {
  std::vector<Real> m, v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update of `param` in place; increments state.t.
void adam_step(std::span<Real> param, std::span<const Real> grad, AdamState& state, const AdamConfig& cfg);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  /// Applies the accumulated gradients. Parameters without a gradient still
  /// advance their step count with a zero gradient.
  void step();
  void zero_grad();
  const AdamConfig& config() const { return cfg_; }
  std::size_t steps() const { return steps_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamConfig cfg_;
  std::size_t steps_ = 0;
};

}  // namespace freqgrl
