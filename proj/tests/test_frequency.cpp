#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "freqgrl/fft.hpp"
#include "freqgrl/frequency.hpp"
#include "freqgrl/ops.hpp"
#include "test_util.hpp"

using namespace freqgrl;
using freqgrl::testing::check_gradients;
using freqgrl::testing::max_abs_diff;
using freqgrl::testing::random_tensor;
using freqgrl::testing::weighted_sum;

namespace {

// O(N^4) DFT in long double.
std::vector<std::complex<long double>> direct_dft(std::span<const Real> x, std::size_t h, std::size_t w) {
  std::vector<std::complex<long double>> out(h * w);
  const long double two_pi = 2 * std::numbers::pi_v<long double>;
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<long double> acc = 0;
      for (std::size_t a = 0; a < h; ++a)
        for (std::size_t b = 0; b < w; ++b) {
          const long double ang = -two_pi * (static_cast<long double>(u * a) / h + static_cast<long double>(v * b) / w);
          acc += static_cast<long double>(x[a * w + b]) * std::complex<long double>(std::cos(ang), std::sin(ang));
        }
      out[u * w + v] = acc;
    }
  return out;
}

Real spectrum_rel_err(const Tensor& view, const std::vector<std::complex<long double>>& ref, std::size_t h,
                      std::size_t w) {
  long double num = 0, den = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    const std::complex<long double> got(view.data()[i], view.data()[h * w + i]);
    num = std::max(num, std::abs(got - ref[i]));
    den = std::max(den, std::abs(ref[i]));
  }
  return static_cast<Real>(num / std::max(den, 1.0L));
}

}  // namespace

TEST(Fft, TwoByTwoExample) {
  Tensor x = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  Spectrum s = fft2(x);
  const Real re[] = {10, -2, -4, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.values.data()[i], re[i]);
    EXPECT_EQ(s.values.data()[4 + i], 0);
  }
  Tensor back = ifft2(s);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(back.data()[i], x.data()[i], 1e-15);
}

TEST(Fft, ConstantInputIsDcOnly) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {6, 10}, {7, 5}, {17, 23}}) {
    Tensor x = Tensor::full({1, h, w}, 0.75);
    Spectrum s = fft2(x);
    EXPECT_NEAR(s.values.data()[0], 0.75 * h * w, 1e-12);
    Real off = 0;
    for (std::size_t i = 1; i < 2 * h * w; ++i) off = std::max(off, std::abs(s.values.data()[i]));
    EXPECT_LT(off, 1e-12) << h << "x" << w;
  }
  // power-of-two sizes give exact zeros
  Spectrum s = fft2(Tensor::full({1, 8, 16}, 0.3));
  for (std::size_t i = 1; i < 2 * 8 * 16; ++i) ASSERT_EQ(s.values.data()[i], 0) << i;
}

TEST(Fft, MatchesDirectDftForAllSmallSizes) {
  std::mt19937_64 rng(21);
  Real worst = 0;
  for (std::size_t h = 1; h <= 16; ++h)
    for (std::size_t w = 1; w <= 16; ++w) {
      Tensor x = random_tensor({1, h, w}, rng);
      worst = std::max(worst, spectrum_rel_err(fft2_view(x), direct_dft(x.data(), h, w), h, w));
    }
  EXPECT_LT(worst, 1e-10);
}

TEST(Fft, BluesteinMatchesMixedRadix) {
  std::mt19937_64 rng(5);
  for (std::size_t n : {1, 2, 7, 12, 16, 17, 30, 64}) {
    FftPlan plain(n), chirp(n, true);
    EXPECT_EQ(chirp.algorithm(), FftPlan::Algorithm::Bluestein);
    std::vector<Complex> a(n), b;
    std::normal_distribution<Real> d;
    for (auto& z : a) z = Complex(d(rng), d(rng));
    b = a;
    plain.forward(a);
    chirp.forward(b);
    for (std::size_t i = 0; i < n; ++i) EXPECT_LT(std::abs(a[i] - b[i]), 1e-10) << n;
  }
  EXPECT_EQ(FftPlan(224).algorithm(), FftPlan::Algorithm::MixedRadix);
  EXPECT_EQ(FftPlan(17 * 19).algorithm(), FftPlan::Algorithm::Bluestein);
}

TEST(Fft, LargePrimeLengthMatchesDirectDft) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({1, 3, 37}, rng);
  EXPECT_LT(spectrum_rel_err(fft2_view(x), direct_dft(x.data(), 3, 37), 3, 37), 1e-10);
}

TEST(Fft, RoundTripOddSizes) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({3, 17, 23}, rng);
  EXPECT_LT(max_abs_diff(ifft2(fft2(x)).data(), x.data()), 1e-6);
}

TEST(Fft, DcOnlySpectrumInvertsToOnes) {
  const std::size_t h = 6, w = 9;
  Tensor v = Tensor::zeros({2, h, w});
  v.mutable_data()[0] = static_cast<Real>(h * w);
  Tensor x = ifft2({SpectrumLayout::Full, false, h, w, v});
  for (Real e : x.data()) EXPECT_NEAR(e, 1, 1e-14);
}

TEST(Fft, ConjugateSymmetryOfRealInput) {
  std::mt19937_64 rng(2);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {5, 12}, {13, 7}}) {
    Spectrum s = fft2(random_tensor({2, h, w}, rng));
    const auto d = s.values.data();
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
          const std::size_t a = u * w + v, b = ((h - u) % h) * w + (w - v) % w;
          EXPECT_NEAR(d[c * h * w + a], d[c * h * w + b], 1e-10);
          EXPECT_NEAR(d[(2 + c) * h * w + a], -d[(2 + c) * h * w + b], 1e-10);
        }
  }
}

TEST(Fft, NonHermitianSpectrumRejected) {
  Tensor v = Tensor::zeros({2, 4, 4});
  v.mutable_data()[1] = 5;  // X(0,1) without its mirror
  EXPECT_THROW(ifft2({SpectrumLayout::Full, false, 4, 4, v}), Error);
}

TEST(Fft, ParsevalIdentity) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> d(1, 64);
    const std::size_t h = d(rng), w = d(rng);
    Tensor x = random_tensor({2, h, w}, rng);
    Real e = 0;
    for (Real v : x.data()) e += v * v;
    const Real ef = spectrum_energy(fft2(x)) / static_cast<Real>(h * w);
    EXPECT_LT(std::abs(e - ef) / e, 1e-8);
  }
}

TEST(Rfft, RetainedRowsAndLayout) {
  EXPECT_EQ(half_rows(4), 3u);
  EXPECT_EQ(half_rows(5), 3u);
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({2, 3, 6, 5}, rng);
  Spectrum hs = rfft2(x);
  EXPECT_EQ(hs.values.shape(), (Shape{2, 6, 4, 5}));
  Spectrum fs = fft2(x);
  // real block then imaginary block, matching the first rows of the full view
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t u = 0; u < 4; ++u)
        for (std::size_t v = 0; v < 5; ++v) EXPECT_EQ(hs.values.at({b, c, u, v}), fs.values.at({b, c, u, v}));
}

TEST(Rfft, ExpandMatchesFullAndRoundTrips) {
  std::mt19937_64 rng(8);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {7, 6}, {5, 9}, {1, 4}, {2, 3}}) {
    Tensor x = random_tensor({3, h, w}, rng);
    Spectrum hs = rfft2(x);
    EXPECT_LT(max_abs_diff(expand_to_full(hs).values.data(), fft2(x).values.data()), 1e-10);
    EXPECT_LT(max_abs_diff(irfft2(hs).data(), x.data()), 1e-6);
  }
}

TEST(Spectrum, CenterRoundTrip) {
  std::mt19937_64 rng(3);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {7, 5}}) {
    Spectrum s = fft2(random_tensor({1, h, w}, rng));
    Spectrum c = center(s);
    EXPECT_TRUE(c.centered);
    // DC moves to (floor(H/2), floor(W/2))
    EXPECT_EQ(c.values.at({0, h / 2, w / 2}), s.values.at({0, 0, 0}));
    Spectrum back = uncenter(c);
    EXPECT_FALSE(back.centered);
    EXPECT_EQ(max_abs_diff(back.values.data(), s.values.data()), 0);
    if (h % 2 == 0 && w % 2 == 0) {
      // shifting by half the period twice is the identity
      Spectrum relabeled{SpectrumLayout::Full, false, h, w, c.values};
      EXPECT_EQ(max_abs_diff(center(relabeled).values.data(), s.values.data()), 0);
    }
    EXPECT_LT(max_abs_diff(ifft2(c).data(), ifft2(s).data()), 1e-15);
  }
}

TEST(Mask, ChebyshevBall) {
  FrequencyMask m = make_mask(8, 8, 1, Polarity::Low);
  EXPECT_EQ(m.count(), 9u);
  for (std::size_t u = 3; u <= 5; ++u)
    for (std::size_t v = 3; v <= 5; ++v) EXPECT_EQ(m.at(u, v), 1);
  FrequencyMask z = make_mask(8, 8, 0, Polarity::Low);
  EXPECT_EQ(z.count(), 1u);
  EXPECT_EQ(z.at(4, 4), 1);
  EXPECT_EQ(make_mask(8, 6, 8, Polarity::Low).count(), 48u);
  EXPECT_EQ(make_mask(8, 6, 8, Polarity::High).count(), 0u);
  EXPECT_THROW(make_mask(4, 4, -1, Polarity::Low), Error);
}

TEST(Mask, ComplementarityProperty) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<std::size_t> d(1, 20);
    std::uniform_real_distribution<Real> r(0, 12);
    const std::size_t h = d(rng), w = d(rng);
    const Real radius = r(rng);
    FrequencyMask lo = make_mask(h, w, radius, Polarity::Low), hi = make_mask(h, w, radius, Polarity::High);
    for (std::size_t i = 0; i < h * w; ++i) ASSERT_EQ(lo.bits[i] + hi.bits[i], 1);
  }
}

TEST(Mask, UncenteredMatchesChebyshevFromDc) {
  FrequencyMask m = make_mask(7, 10, 2, Polarity::Low);
  auto un = m.uncentered();
  for (std::size_t u = 0; u < 7; ++u)
    for (std::size_t v = 0; v < 10; ++v) EXPECT_EQ(un[u * 10 + v], chebyshev_from_dc(u, v, 7, 10) <= 2 ? 1 : 0);
}

TEST(Decompose, DcOnlyAtRadiusZero) {
  std::mt19937_64 rng(12);
  Spectrum s = fft2(random_tensor({3, 8, 8}, rng));
  auto [low, high] = decompose(s, make_mask(8, 8, 0, Polarity::Low));
  EXPECT_TRUE(low.centered && high.centered);
  Spectrum c = center(s);
  for (std::size_t ch = 0; ch < 6; ++ch)
    for (std::size_t u = 0; u < 8; ++u)
      for (std::size_t v = 0; v < 8; ++v) {
        const bool dc = u == 4 && v == 4;
        EXPECT_EQ(low.values.at({ch, u, v}), dc ? c.values.at({ch, u, v}) : 0);
        EXPECT_EQ(high.values.at({ch, u, v}), dc ? 0 : c.values.at({ch, u, v}));
      }
}

TEST(Decompose, RecompositionIsBitExactAndEnergySplits) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> d(2, 24);
    const std::size_t h = d(rng), w = d(rng);
    Spectrum s = fft2(random_tensor({3, h, w}, rng));
    auto [low, high] = decompose(s, make_mask(h, w, std::uniform_real_distribution<Real>(0, 6)(rng), Polarity::Low));
    Tensor sum_parts = add(low.values, high.values);
    Spectrum c = center(s);
    for (std::size_t i = 0; i < sum_parts.numel(); ++i) ASSERT_EQ(sum_parts.data()[i], c.values.data()[i]);
    const Real e = spectrum_energy(s), el = spectrum_energy(low), eh = spectrum_energy(high);
    EXPECT_LT(std::abs(el + eh - e) / e, 1e-12);
  }
}

TEST(Decompose, DimensionMismatchRejected) {
  Spectrum s = fft2(Tensor::zeros({1, 8, 8}));
  EXPECT_THROW(decompose(s, make_mask(8, 6, 1, Polarity::Low)), Error);
  EXPECT_THROW(decompose(rfft2(Tensor::zeros({1, 8, 8})), make_mask(8, 8, 1, Polarity::Low)), Error);
}

TEST(Band, FullBandIsIdentity) {
  std::mt19937_64 rng(14);
  Tensor x = random_tensor({3, 12, 10}, rng, 0, 1);
  EXPECT_LT(max_abs_diff(band_reconstruct(x, 0, 1).data(), x.data()), 1e-6);
}

TEST(Band, LowestBandOnConstantImage) {
  Tensor x = Tensor::full({3, 8, 8}, 0.4);
  EXPECT_LT(max_abs_diff(band_reconstruct(x, 0, 1e-3).data(), x.data()), 1e-12);
}

TEST(Band, HighBandOnConstantImageIsZeroBeforeClamp) {
  Tensor x = Tensor::full({3, 8, 8}, 0.4);
  Tensor y = band_reconstruct(x, 0.5, 1, false);
  for (Real v : y.data()) EXPECT_EQ(v, 0);
}

TEST(Band, ClampsAndValidates) {
  std::mt19937_64 rng(15);
  Tensor x = random_tensor({3, 8, 8}, rng, 0.2, 0.6);
  Tensor y = band_reconstruct(x, 0.25, 1);
  for (Real v : y.data()) {
    EXPECT_GE(v, 0.2);
    EXPECT_LE(v, 0.6);
  }
  EXPECT_THROW(band_reconstruct(x, 0.5, 0.4), Error);
  EXPECT_THROW(band_reconstruct(x, 0.1, 0.2), Error);  // no bin at normalized radius in [0.1, 0.2) on 8x8
}

TEST(Band, NormalizedRadiusConvention) {
  EXPECT_EQ(normalized_radius(0, 0, 8, 8), 0);
  EXPECT_EQ(normalized_radius(4, 0, 8, 8), 1);
  EXPECT_EQ(normalized_radius(2, 7, 8, 8), 0.5);
  EXPECT_TRUE(in_band(1.0, 0.5, 1.0));
  EXPECT_FALSE(in_band(0.75, 0.5, 0.75));
  auto half = band_pattern_half(8, 8, 0.5, 1.0);
  EXPECT_EQ(half.size(), 5u * 8u);
  EXPECT_EQ(half[0], 0);
  EXPECT_EQ(half[4 * 8 + 0], 1);
}

TEST(Band, SplitByRadiusRecomposes) {
  std::mt19937_64 rng(16);
  Tensor x = random_tensor({2, 3, 9, 8}, rng, 0, 1);
  auto [lo, hi] = split_by_radius(x, 1.5);
  EXPECT_LT(max_abs_diff(add(lo, hi).data(), x.data()), 1e-12);
}

class ViewGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(ViewGradient, TransformsMatchFiniteDifferences) {
  std::mt19937_64 rng(GetParam());
  const std::uint64_t s = GetParam();
  const std::size_t h = 3 + GetParam() % 4, w = 4 + GetParam() % 3;
  Tensor x = random_tensor({2, 2, h, w}, rng);
  EXPECT_LT(check_gradients([&] { return weighted_sum(fft2_view(x), s); }, {x}).worst, 1e-4);
  EXPECT_LT(check_gradients([&] { return weighted_sum(rfft2_view(x), s); }, {x}).worst, 1e-4);
  Tensor full = fft2_view(x).detach();
  EXPECT_LT(check_gradients([&] { return weighted_sum(ifft2_view(full), s); }, {full}).worst, 1e-4);
  // Perturbing a Hermitian-reduced half spectrum stays valid, so the adjoint
  // is checked directly on arbitrary half-spectrum inputs.
  Tensor half = random_tensor({2, 4, half_rows(h), w}, rng);
  EXPECT_LT(check_gradients([&] { return weighted_sum(irfft2_view(half, h), s); }, {half}).worst, 1e-4);
  EXPECT_LT(check_gradients([&] { return weighted_sum(irfft2_view(rfft2_view(x), h), s); }, {x}).worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, ViewGradient, ::testing::Range<std::uint64_t>(0, 20));
