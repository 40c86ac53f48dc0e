#include <gtest/gtest.h>

#include "freqgrl/frequency.hpp"
#include "freqgrl/lfr.hpp"
#include "test_util.hpp"

using namespace freqgrl;
using freqgrl::testing::max_abs_diff;
using freqgrl::testing::random_tensor;

namespace {

Episode random_episode(std::size_t n, std::size_t k, std::size_t m, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Episode e;
  e.n_way = n;
  e.k_shot = k;
  e.m_query = m;
  e.support = random_tensor({n * k, 3, h, w}, rng, 0, 1);
  e.query = random_tensor({n * m, 3, h, w}, rng, 0, 1);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < k; ++i) e.support_labels.push_back(static_cast<int>(c));
    for (std::size_t i = 0; i < m; ++i) e.query_labels.push_back(static_cast<int>(c));
    e.class_ids.push_back("c" + std::to_string(c + seed * 10));
  }
  return e;
}

Tensor image_at(const Tensor& batch, std::size_t i) {
  return reshape(slice(batch, 0, i, i + 1), {batch.dim(1), batch.dim(2), batch.dim(3)});
}

}  // namespace

TEST(SampleRadius, FixedAndDegenerateGammas) {
  Rng rng(1);
  LfrConfig cfg;
  cfg.gamma = GammaDist::fixed(Real(0.1));
  EXPECT_NEAR(sample_radius(cfg, 224, 224, rng), 22.4, 1e-12);
  cfg.gamma = GammaDist::fixed(0);
  EXPECT_EQ(sample_radius(cfg, 224, 224, rng), 0);
  cfg.gamma = GammaDist::fixed(Real(0.5));
  EXPECT_NEAR(sample_radius(cfg, 30, 20, rng), 10, 1e-12);  // min(H, W)
}

TEST(SampleRadius, UniformMeanConverges) {
  Rng rng(2);
  LfrConfig cfg;  // U(0, 0.2)
  double total = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Real r = sample_radius(cfg, 100, 100, rng);
    ASSERT_GE(r, 0);
    ASSERT_LE(r, 20);
    total += r;
  }
  EXPECT_NEAR(total / n, 10.0, 0.1);
}

TEST(LfrConfig, RejectsInvalidRanges) {
  LfrConfig cfg;
  cfg.gamma = GammaDist::uniform(Real(0.3), Real(0.1));
  EXPECT_THROW(cfg.validate(), Error);
  cfg.gamma = GammaDist::fixed(Real(1.5));
  EXPECT_THROW(cfg.validate(), Error);
  cfg.gamma = GammaDist::uniform(Real(-0.1), Real(0.1));
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_EQ(parse_replace_mode("hfr"), ReplaceMode::Hfr);
  EXPECT_EQ(parse_pairing("index-aligned"), Pairing::IndexAligned);
  EXPECT_THROW(parse_pairing("nearest"), Error);
}

TEST(ApplyLfr, SelfReplacementIsIdentity) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Episode e = random_episode(3, 2, 3, 12, 10, seed);
    Rng rng(seed);
    for (ReplaceMode mode : {ReplaceMode::Lfr, ReplaceMode::Hfr}) {
      Episode p = apply_lfr_radius(e, e, Real(2.5), mode, Pairing::IndexAligned, rng);
      EXPECT_LT(max_abs_diff(p.support.data(), e.support.data()), 1e-6);
      EXPECT_LT(max_abs_diff(p.query.data(), e.query.data()), 1e-6);
    }
  }
}

TEST(ApplyLfr, FullRadiusReturnsTargets) {
  Episode s = random_episode(2, 1, 2, 9, 12, 1), t = random_episode(2, 1, 2, 9, 12, 2);
  Rng rng(0);
  Episode p = apply_lfr_radius(s, t, 12, ReplaceMode::Lfr, Pairing::IndexAligned, rng);
  EXPECT_LT(max_abs_diff(p.support.data(), t.support.data()), 1e-6);
  EXPECT_LT(max_abs_diff(p.query.data(), t.query.data()), 1e-6);
  // the mirror case: HFR at full radius keeps the source
  Episode q = apply_lfr_radius(s, t, 12, ReplaceMode::Hfr, Pairing::IndexAligned, rng);
  EXPECT_LT(max_abs_diff(q.query.data(), s.query.data()), 1e-6);
}

TEST(ApplyLfr, ZeroGammaSubstitutesChannelMeans) {
  // Values well inside [0,1] so that clamping cannot interfere.
  Episode s = random_episode(2, 1, 1, 8, 8, 3), t = random_episode(2, 1, 1, 8, 8, 4);
  for (Tensor* b : {&s.support, &s.query, &t.support, &t.query})
    for (auto& v : b->mutable_data()) v = Real(0.3) + Real(0.4) * v;
  LfrConfig cfg;
  cfg.gamma = GammaDist::fixed(0);
  cfg.pairing = Pairing::IndexAligned;
  Rng rng(5);
  Episode p = apply_lfr(s, t, cfg, rng);
  const std::size_t plane = 64;
  for (const auto& [src, tar, out] : {std::tuple{&s.support, &t.support, &p.support}, {&s.query, &t.query, &p.query}}) {
    auto xs = src->data(), xt = tar->data(), xo = out->data();
    for (std::size_t pl = 0; pl < xs.size() / plane; ++pl) {
      Real ms = 0, mt = 0;
      for (std::size_t i = 0; i < plane; ++i) ms += xs[pl * plane + i], mt += xt[pl * plane + i];
      ms /= plane;
      mt /= plane;
      for (std::size_t i = 0; i < plane; ++i) EXPECT_NEAR(xo[pl * plane + i], xs[pl * plane + i] - ms + mt, 1e-6);
    }
  }
}

TEST(ApplyLfr, IdempotentAgainstSameTarget) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Episode s = random_episode(3, 1, 2, 16, 16, 100 + seed), t = random_episode(3, 1, 2, 16, 16, 200 + seed);
    Rng rng(seed);
    const Real r = Real(seed % 4);
    Episode once = apply_lfr_radius(s, t, r, ReplaceMode::Lfr, Pairing::IndexAligned, rng, nullptr, false);
    Episode twice = apply_lfr_radius(once, t, r, ReplaceMode::Lfr, Pairing::IndexAligned, rng, nullptr, false);
    EXPECT_LT(max_abs_diff(once.query.data(), twice.query.data()), 1e-6);
    EXPECT_LT(max_abs_diff(once.support.data(), twice.support.data()), 1e-6);
  }
}

TEST(ApplyLfr, BandCorrectnessAndEnergyBeforeClamping) {
  std::mt19937_64 gen(17);
  std::uniform_int_distribution<std::size_t> size(4, 20);
  std::uniform_real_distribution<Real> radius(0, 8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t h = size(gen), w = size(gen);
    Tensor src = random_tensor({2, 3, h, w}, gen, 0, 1), tar = random_tensor({2, 3, h, w}, gen, 0, 1);
    const Real r = radius(gen);
    Tensor fused = replace_band(src, tar, r, ReplaceMode::Lfr, false);
    const FrequencyMask low = make_mask(h, w, r, Polarity::Low);
    for (std::size_t b = 0; b < 2; ++b) {
      Spectrum so = center(fft2(image_at(fused, b)));
      Spectrum ss = center(fft2(image_at(src, b)));
      Spectrum st = center(fft2(image_at(tar, b)));
      Real e_out = 0, e_expect = 0;
      for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t u = 0; u < h; ++u)
          for (std::size_t v = 0; v < w; ++v) {
            const std::size_t i = (c * h + u) * w + v;
            const Real want = low.at(u, v) ? st.values.data()[i] : ss.values.data()[i];
            ASSERT_NEAR(so.values.data()[i], want, 1e-6);
            e_out += so.values.data()[i] * so.values.data()[i];
            e_expect += want * want;
          }
      EXPECT_NEAR(e_out, e_expect, 1e-8 * e_expect);
    }
  }
}

TEST(ApplyLfr, PreservesLabelsAndStructure) {
  Episode s = random_episode(4, 2, 5, 8, 8, 7), t = random_episode(4, 1, 2, 8, 8, 8);
  Rng rng(1);
  LfrConfig cfg;  // cyclic pairing handles the smaller target task
  LfrProvenance prov;
  Episode p = apply_lfr(s, t, cfg, rng, &prov);
  EXPECT_EQ(p.support_labels, s.support_labels);
  EXPECT_EQ(p.query_labels, s.query_labels);
  EXPECT_EQ(p.class_ids, s.class_ids);
  EXPECT_EQ(p.support.shape(), s.support.shape());
  EXPECT_EQ(p.query.shape(), s.query.shape());
  EXPECT_EQ(p.domain, DomainTag::Pseudo);
  EXPECT_EQ(prov.pairs.size(), 8u + 20u);
  EXPECT_GE(prov.gamma, 0);
  EXPECT_LE(prov.gamma, 0.2);
  EXPECT_NEAR(prov.radius, prov.gamma * 8, 1e-12);
  for (Real v : p.query.data()) ASSERT_TRUE(v >= 0 && v <= 1);
}

TEST(ApplyLfr, CyclicPairsWithinSameClassPosition) {
  Episode s = random_episode(3, 1, 4, 6, 6, 1), t = random_episode(3, 1, 2, 6, 6, 2);
  Rng rng(0);
  LfrProvenance prov;
  apply_lfr_radius(s, t, 1, ReplaceMode::Lfr, Pairing::Cyclic, rng, &prov);
  // target order: support (one per class) then queries (two per class)
  auto target_class = [](std::size_t j) { return j < 3 ? j : (j - 3) / 2; };
  for (std::size_t i = 0; i < prov.pairs.size(); ++i) {
    const std::size_t src_class = i < 3 ? i : (i - 3) / 4;
    EXPECT_EQ(target_class(prov.pairs[i]), src_class) << i;
  }
}

TEST(ApplyLfr, ErrorsOnMismatch) {
  Episode s = random_episode(2, 1, 2, 8, 8, 1);
  Rng rng(0);
  EXPECT_THROW(apply_lfr_radius(s, random_episode(2, 1, 2, 8, 6, 2), 1, ReplaceMode::Lfr, Pairing::Cyclic, rng), Error);
  EXPECT_THROW(apply_lfr_radius(s, random_episode(3, 1, 2, 8, 8, 2), 1, ReplaceMode::Lfr, Pairing::Cyclic, rng), Error);
  EXPECT_THROW(apply_lfr_radius(s, random_episode(2, 1, 1, 8, 8, 2), 1, ReplaceMode::Lfr, Pairing::IndexAligned, rng),
               Error);
  EXPECT_NO_THROW(
      apply_lfr_radius(s, random_episode(2, 1, 1, 8, 8, 2), 1, ReplaceMode::Lfr, Pairing::RandomWithinTask, rng));
}

TEST(ApplyLfr, HfrRecordsModeAndSwapsHighBand) {
  Episode s = random_episode(2, 1, 1, 10, 10, 5), t = random_episode(2, 1, 1, 10, 10, 6);
  LfrConfig cfg;
  cfg.mode = ReplaceMode::Hfr;
  cfg.pairing = Pairing::IndexAligned;
  Rng rng(3);
  LfrProvenance prov;
  Episode p = apply_lfr(s, t, cfg, rng, &prov);
  EXPECT_EQ(prov.mode, ReplaceMode::Hfr);
  Episode lfr_view = apply_lfr_radius(t, s, prov.radius, ReplaceMode::Lfr, Pairing::IndexAligned, rng);
  // HFR(s, t) == LFR(t, s): low band from s, high band from t
  EXPECT_LT(max_abs_diff(p.query.data(), lfr_view.query.data()), 1e-12);
}
