#include <gtest/gtest.h>

#include <complex>

#include "freqgrl/freq_layers.hpp"
#include "freqgrl/frequency.hpp"
#include "test_util.hpp"

using namespace freqgrl;
using freqgrl::testing::check_gradients;
using freqgrl::testing::max_abs_diff;
using freqgrl::testing::random_tensor;
using freqgrl::testing::weighted_sum;

namespace {

void randomize(Tensor& t, std::mt19937_64& gen, Real lo, Real hi) {
  std::uniform_real_distribution<Real> dist(lo, hi);
  for (auto& v : t.mutable_data()) v = dist(gen);
}

}  // namespace

TEST(Hfe, ConstantInputHasEmptyMaskedSpectrum) {
  for (Real lo : {Real(0.1), Real(0.5), Real(0.9)}) {
    HfeConfig cfg;
    cfg.band_lo = lo;
    Rng rng(1);
    HfeLayer layer(3, 8, 6, cfg, rng);
    Tensor f = Tensor::full({2, 3, 8, 6}, Real(0.7));
    Tensor m = layer.masked_spectrum(f);
    EXPECT_EQ(m.shape(), (Shape{2, 6, 5, 6}));
    for (Real v : m.data()) ASSERT_LT(std::abs(v), 1e-12);
  }
}

TEST(Hfe, ZeroBranchAtInitLeavesResidual) {
  std::mt19937_64 gen(3);
  for (HfeInput input : {HfeInput::Freq, HfeInput::SpatialMasked, HfeInput::SpatialRaw}) {
    HfeConfig cfg;
    cfg.band_lo = 0;
    cfg.input = input;
    Rng rng(2);
    HfeLayer layer(4, 8, 8, cfg, rng);
    Tensor f_prev = random_tensor({2, 4, 8, 8}, gen), f_res = random_tensor({2, 4, 8, 8}, gen);
    for (BnMode mode : {BnMode::Train, BnMode::Eval}) {
      Tensor out = layer.forward(f_prev, f_res, mode);
      EXPECT_EQ(max_abs_diff(out.data(), f_res.data()), 0);
    }
  }
}

TEST(Hfe, MaskKeepsOnlyBandBins) {
  std::mt19937_64 gen(5);
  HfeConfig cfg;  // [0.5, 1]
  Rng rng(0);
  HfeLayer layer(2, 8, 8, cfg, rng);
  Tensor f = random_tensor({1, 2, 8, 8}, gen);
  Tensor full = rfft2_view(f), masked = layer.masked_spectrum(f);
  const std::size_t rows = 5;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t u = 0; u < rows; ++u)
      for (std::size_t v = 0; v < 8; ++v) {
        const std::size_t i = (c * rows + u) * 8 + v;
        const bool keep = in_band(normalized_radius(u, v, 8, 8), Real(0.5), 1);
        EXPECT_EQ(masked.data()[i], keep ? full.data()[i] : 0) << c << " " << u << " " << v;
      }
}

TEST(Hfe, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(11);
  for (HfeInput input : {HfeInput::Freq, HfeInput::SpatialMasked, HfeInput::SpatialRaw}) {
    HfeConfig cfg;
    cfg.input = input;
    cfg.band_lo = Real(0.25);
    Rng rng(4);
    HfeLayer layer(4, 8, 8, cfg, rng);
    // Move off the zero init so every parameter gets a nonzero gradient.
    randomize(layer.post_gamma, gen, Real(0.5), Real(1.5));
    randomize(layer.post_beta, gen, Real(-0.5), Real(0.5));
    randomize(layer.conv2_b, gen, Real(-0.5), Real(0.5));
    Tensor f_prev = random_tensor({2, 4, 8, 8}, gen), f_res = random_tensor({2, 4, 8, 8}, gen);
    auto loss = [&] { return weighted_sum(layer.forward(f_prev, f_res, BnMode::Eval), 9); };
    auto r = check_gradients(loss, {f_prev, f_res, layer.conv1_w, layer.bn1_gamma, layer.bn1_beta, layer.conv2_w,
                                    layer.conv2_b, layer.post_gamma, layer.post_beta});
    EXPECT_LT(r.worst, 1e-4) << to_string(input);
  }
}

TEST(Hfe, TrainModeGradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(12);
  HfeConfig cfg;
  Rng rng(6);
  HfeLayer layer(4, 8, 8, cfg, rng);
  randomize(layer.post_gamma, gen, Real(0.5), Real(1.5));
  Tensor f_prev = random_tensor({2, 4, 8, 8}, gen), f_res = random_tensor({2, 4, 8, 8}, gen);
  auto loss = [&] { return weighted_sum(layer.forward(f_prev, f_res, BnMode::Train), 3); };
  auto r = check_gradients(loss, {f_prev, layer.conv1_w, layer.conv2_w, layer.post_gamma});
  EXPECT_LT(r.worst, 1e-4);
}

TEST(Hfe, RejectsBadShapesAndBands) {
  Rng rng(0);
  HfeLayer layer(4, 8, 8, HfeConfig{}, rng);
  std::mt19937_64 gen(0);
  Tensor ok = random_tensor({1, 4, 8, 8}, gen);
  EXPECT_THROW(layer.forward(random_tensor({1, 4, 8, 6}, gen), ok, BnMode::Eval), Error);
  EXPECT_THROW(layer.forward(ok, random_tensor({1, 3, 8, 8}, gen), BnMode::Eval), Error);
  HfeConfig bad;
  bad.band_lo = Real(0.6);
  bad.band_hi = Real(0.4);
  EXPECT_THROW(bad.validate(), Error);
  bad.band_lo = -1;
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_EQ(parse_hfe_input("spatial_masked"), HfeInput::SpatialMasked);
  EXPECT_THROW(parse_hfe_input("wavelet"), Error);
}

TEST(Hfe, HalfSpectrumConvCostParity) {
  // The frequency conv runs at width 2C on H/2+1 rows; the equivalent
  // spatial conv runs at the same width on all H rows.
  for (std::size_t s : {4u, 8u, 16u, 32u, 7u}) {
    Rng rng(0);
    HfeLayer layer(8, s, s, HfeConfig{}, rng);
    const MacCount freq = layer.macs();
    const MacCount spatial = conv_pair_macs(16, 16, s, s);
    const Real ratio = static_cast<Real>(freq.total()) / static_cast<Real>(spatial.total());
    EXPECT_LE(ratio, 1.2) << s;
    EXPECT_NEAR(ratio, static_cast<Real>(s / 2 + 1) / static_cast<Real>(s), 1e-12);
  }
  const MacCount m = conv_pair_macs(3, 5, 4, 6);
  EXPECT_EQ(m.conv3x3, 3u * 5 * 9 * 24);
  EXPECT_EQ(m.conv1x1, 5u * 5 * 24);  // the 1x1 maps cout -> cout
}

TEST(Gff, IdentityAtInit) {
  std::mt19937_64 gen(7);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {7, 5}, {4, 9}, {1, 1}}) {
    GffLayer layer(3, h, w);
    Tensor f = random_tensor({2, 3, h, w}, gen);
    EXPECT_LT(max_abs_diff(layer.forward(f).data(), f.data()), 1e-6) << h << "x" << w;
  }
}

TEST(Gff, ZeroWeightsGiveZeros) {
  std::mt19937_64 gen(8);
  GffLayer layer(2, 6, 6);
  for (auto& v : layer.weights.mutable_data()) v = 0;
  for (Real v : layer.forward(random_tensor({2, 2, 6, 6}, gen)).data()) ASSERT_EQ(v, 0);
}

TEST(Gff, LinearInFeatures) {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<Real> coef(-2, 2);
  for (int trial = 0; trial < 10; ++trial) {
    GffLayer layer(3, 8, 6);
    randomize(layer.weights, gen, -1, 1);
    Tensor x = random_tensor({2, 3, 8, 6}, gen), y = random_tensor({2, 3, 8, 6}, gen);
    const Real a = coef(gen), b = coef(gen);
    Tensor lhs = layer.forward(add(scale(x, a), scale(y, b)));
    Tensor rhs = add(scale(layer.forward(x), a), scale(layer.forward(y), b));
    EXPECT_LT(max_abs_diff(lhs.data(), rhs.data()), 1e-8);
  }
}

TEST(Gff, MatchesExplicitComplexProduct) {
  std::mt19937_64 gen(10);
  GffLayer layer(1, 4, 4);
  randomize(layer.weights, gen, -1, 1);
  Tensor f = random_tensor({1, 1, 4, 4}, gen);
  Tensor x = rfft2_view(f);
  std::vector<Real> y(x.numel());
  const std::size_t plane = 3 * 4;
  auto xd = x.data(), wd = layer.weights.data();
  for (std::size_t i = 0; i < plane; ++i) {
    const std::complex<Real> p = std::complex<Real>(xd[i], xd[plane + i]) * std::complex<Real>(wd[i], wd[plane + i]);
    y[i] = p.real();
    y[plane + i] = p.imag();
  }
  Tensor expect = irfft2_view(Tensor::from_data({1, 2, 3, 4}, y), 4);
  EXPECT_LT(max_abs_diff(layer.forward(f).data(), expect.data()), 1e-12);
}

TEST(Gff, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(13);
  GffLayer layer(4, 8, 8);
  randomize(layer.weights, gen, -1, 1);
  Tensor f = random_tensor({2, 4, 8, 8}, gen);
  auto r = check_gradients([&] { return weighted_sum(layer.forward(f), 4); }, {f, layer.weights});
  EXPECT_LT(r.worst, 1e-4);
}

TEST(Gff, RejectsMismatchedResolution) {
  GffLayer layer(2, 8, 8);
  std::mt19937_64 gen(0);
  EXPECT_THROW(layer.forward(random_tensor({1, 2, 4, 4}, gen)), Error);
  EXPECT_THROW(layer.forward(random_tensor({1, 3, 8, 8}, gen)), Error);
}

TEST(ExportFilterMap, IdentityIsAllZeros) {
  GffLayer layer(4, 8, 8);
  auto map = export_filter_map(layer);
  EXPECT_EQ(map.size(), 5u * 8);
  for (Real v : map) EXPECT_EQ(v, 0);
}

TEST(ExportFilterMap, SingleBoostedBin) {
  GffLayer layer(3, 6, 6);
  const std::size_t plane = 4 * 6, bin = 7;
  for (std::size_t c = 0; c < 3; ++c) layer.weights.mutable_data()[c * plane + bin] = 2;
  auto map = export_filter_map(layer);
  for (std::size_t i = 0; i < plane; ++i) EXPECT_EQ(map[i], i == bin ? 1 : 0);
}

TEST(ExportFilterMap, RandomWeightsNormalized) {
  std::mt19937_64 gen(14);
  for (int trial = 0; trial < 5; ++trial) {
    GffLayer layer(5, 8, 8);
    randomize(layer.weights, gen, -3, 3);
    auto map = export_filter_map(layer);
    EXPECT_EQ(*std::min_element(map.begin(), map.end()), 0);
    EXPECT_EQ(*std::max_element(map.begin(), map.end()), 1);
    for (Real v : map) EXPECT_TRUE(v >= 0 && v <= 1);
  }
}
