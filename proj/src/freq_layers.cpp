#include "freqgrl/freq_layers.hpp"

#include <algorithm>
#include <cmath>

#include "freqgrl/frequency.hpp"

namespace freqgrl {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<Real> dist(0, std::sqrt(Real(2) / static_cast<Real>(fan_in)));
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = dist(rng);
  return t;
}

std::string to_string(HfeInput input) {
  switch (input) {
    case HfeInput::Freq: return "freq";
    case HfeInput::SpatialMasked: return "spatial_masked";
    case HfeInput::SpatialRaw: return "spatial_raw";
  }
  return "?";
}

HfeInput parse_hfe_input(const std::string& s) {
  if (s == "freq") return HfeInput::Freq;
  if (s == "spatial_masked") return HfeInput::SpatialMasked;
  if (s == "spatial_raw") return HfeInput::SpatialRaw;
  throw Error("unknown HFE input mode '" + s + "' (expected freq, spatial_masked or spatial_raw)");
}

void HfeConfig::validate() const {
  if (!(band_lo >= 0 && band_lo < band_hi && band_hi <= 1)) throw Error("hfe: band needs 0 <= lo < hi <= 1");
}

MacCount conv_pair_macs(std::size_t cin, std::size_t cout, std::size_t h, std::size_t w) {
  return {h * w * cout * cin * 9, h * w * cout * cout};
}

// ---------------------------------------------------------------- HFE

HfeLayer::HfeLayer(std::size_t channels, std::size_t height, std::size_t width, HfeConfig cfg, Rng& rng)
    : bn1(0), post_bn(channels), channels_(channels), height_(height), width_(width), cfg_(cfg) {
  cfg_.validate();
  if (channels == 0 || height == 0 || width == 0) throw Error("hfe: empty layer");
  conv_width_ = cfg_.input == HfeInput::Freq ? 2 * channels : channels;
  const std::size_t c = conv_width_;
  conv1_w = he_normal({c, c, 3, 3}, c * 9, rng);
  bn1_gamma = Tensor::full({c}, 1);
  bn1_beta = Tensor::zeros({c});
  bn1 = BatchNormState(c);
  conv2_w = he_normal({c, c, 1, 1}, c, rng);
  conv2_b = Tensor::zeros({c});
  // Zero affine: the branch starts as a no-op yet theta still receives
  // gradient once post_gamma moves.
  post_gamma = Tensor::zeros({channels});
  post_beta = Tensor::zeros({channels});
  band_ = band_pattern_half(height, width, cfg_.band_lo, cfg_.band_hi);
  for (Tensor* t : {&conv1_w, &bn1_gamma, &bn1_beta, &conv2_w, &conv2_b, &post_gamma, &post_beta}) t->set_requires_grad(true);
}

void HfeLayer::check_input(const Tensor& f, const char* what) const {
  if (f.rank() != 4 || f.dim(1) != channels_ || f.dim(2) != height_ || f.dim(3) != width_) {
    throw Error(std::string("hfe: ") + what + " has shape " + shape_str(f.shape()) + ", layer expects [B," +
                std::to_string(channels_) + "," + std::to_string(height_) + "," + std::to_string(width_) + "]");
  }
}

Tensor HfeLayer::masked_spectrum(const Tensor& f_prev) const {
  check_input(f_prev, "f_prev");
  return mul_const(rfft2_view(f_prev), band_);
}

Tensor HfeLayer::branch(const Tensor& f_prev, BnMode mode) {
  check_input(f_prev, "f_prev");
  auto theta = [&](const Tensor& x) {
    Tensor h = relu(batchnorm2d(conv2d(x, conv1_w, Tensor(), 1, 1), bn1_gamma, bn1_beta, bn1, mode));
    return conv2d(h, conv2_w, conv2_b, 1, 0);
  };
  Tensor spatial;
  switch (cfg_.input) {
    case HfeInput::Freq: spatial = irfft2_view(theta(masked_spectrum(f_prev)), height_); break;
    case HfeInput::SpatialMasked: spatial = theta(irfft2_view(masked_spectrum(f_prev), height_)); break;
    case HfeInput::SpatialRaw: spatial = theta(f_prev); break;
  }
  return batchnorm2d(spatial, post_gamma, post_beta, post_bn, mode);
}

Tensor HfeLayer::forward(const Tensor& f_prev, const Tensor& f_res, BnMode mode) {
  check_input(f_res, "f_res");
  return add(f_res, branch(f_prev, mode));
}

MacCount HfeLayer::macs() const {
  const std::size_t rows = cfg_.input == HfeInput::Freq ? half_rows(height_) : height_;
  return conv_pair_macs(conv_width_, conv_width_, rows, width_);
}

void HfeLayer::collect_parameters(const std::string& prefix, NamedTensors& out) {
  out.emplace_back(prefix + "conv1.weight", conv1_w);
  out.emplace_back(prefix + "bn1.weight", bn1_gamma);
  out.emplace_back(prefix + "bn1.bias", bn1_beta);
  out.emplace_back(prefix + "conv2.weight", conv2_w);
  out.emplace_back(prefix + "conv2.bias", conv2_b);
  out.emplace_back(prefix + "post_bn.weight", post_gamma);
  out.emplace_back(prefix + "post_bn.bias", post_beta);
}

void HfeLayer::collect_buffers(const std::string& prefix, NamedTensors& out) {
  out.emplace_back(prefix + "bn1.running_mean", bn1.running_mean);
  out.emplace_back(prefix + "bn1.running_var", bn1.running_var);
  out.emplace_back(prefix + "post_bn.running_mean", post_bn.running_mean);
  out.emplace_back(prefix + "post_bn.running_var", post_bn.running_var);
}

// ---------------------------------------------------------------- GFF

GffLayer::GffLayer(std::size_t channels, std::size_t height, std::size_t width)
    : channels_(channels), height_(height), width_(width) {
  if (channels == 0 || height == 0 || width == 0) throw Error("gff: empty layer");
  const std::size_t rows = half_rows(height);
  weights = Tensor::zeros({2 * channels, rows, width});
  auto d = weights.mutable_data();
  std::fill(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(channels * rows * width), Real(1));
  weights.set_requires_grad(true);
}

Tensor GffLayer::forward(const Tensor& f) const {
  if (f.rank() != 4 || f.dim(1) != channels_ || f.dim(2) != height_ || f.dim(3) != width_) {
    throw Error("gff: input " + shape_str(f.shape()) + " does not match layer resolution [B," +
                std::to_string(channels_) + "," + std::to_string(height_) + "," + std::to_string(width_) + "]");
  }
  const std::size_t c = channels_;
  Tensor x = rfft2_view(f);
  Tensor xr = slice(x, 1, 0, c), xi = slice(x, 1, c, 2 * c);
  Tensor wr = slice(weights, 0, 0, c), wi = slice(weights, 0, c, 2 * c);
  Tensor yr = sub(mul_broadcast(xr, wr), mul_broadcast(xi, wi));
  Tensor yi = add(mul_broadcast(xr, wi), mul_broadcast(xi, wr));
  return irfft2_view(concat({yr, yi}, 1), height_);
}

void GffLayer::collect_parameters(const std::string& prefix, NamedTensors& out) {
  out.emplace_back(prefix + "weight", weights);
}

std::vector<Real> export_filter_map(const GffLayer& layer) {
  const std::size_t c = layer.channels(), rows = half_rows(layer.height()), w = layer.width(), plane = rows * w;
  std::vector<Real> map(plane, 0);
  auto d = layer.weights.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) map[i] += std::hypot(d[ch * plane + i], d[(c + ch) * plane + i]);
  for (auto& v : map) v /= static_cast<Real>(c);
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  const Real a = *lo, span = *hi - *lo;
  for (auto& v : map) v = span > 0 ? (v - a) / span : 0;
  return map;
}

}  // namespace freqgrl
