#include "freqgrl/optim.hpp"

#include <cmath>

namespace freqgrl {

void adam_step(std::span<Real> param, std::span<const Real> grad, AdamState& state, const AdamConfig& cfg) {
  if (grad.size() != param.size()) {
    throw Error("adam: gradient has " + std::to_string(grad.size()) + " elements, parameter " +
                std::to_string(param.size()));
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(param.size(), 0);
    state.v.assign(param.size(), 0);
  }
  if (state.m.size() != param.size() || state.v.size() != param.size()) throw Error("adam: state shape mismatch");
  ++state.t;
  const Real c1 = 1 - std::pow(cfg.beta1, static_cast<Real>(state.t));
  const Real c2 = 1 - std::pow(cfg.beta2, static_cast<Real>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1 - cfg.beta2) * grad[i] * grad[i];
    param[i] -= cfg.lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (p.has_grad()) {
      adam_step(p.mutable_data(), p.grad(), states_[i], cfg_);
    } else {
      const std::vector<Real> zero(p.numel(), 0);
      adam_step(p.mutable_data(), zero, states_[i], cfg_);
    }
  }
  ++steps_;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace freqgrl
