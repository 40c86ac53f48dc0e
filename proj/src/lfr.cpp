#include "freqgrl/lfr.hpp"

#include <algorithm>
#include <sstream>

#include "freqgrl/fft.hpp"
#include "freqgrl/frequency.hpp"

namespace freqgrl {

std::string to_string(ReplaceMode mode) { return mode == ReplaceMode::Lfr ? "LFR" : "HFR"; }

std::string to_string(Pairing pairing) {
  switch (pairing) {
    case Pairing::IndexAligned: return "index-aligned";
    case Pairing::Cyclic: return "cyclic";
    case Pairing::RandomWithinTask: return "random-within-task";
  }
  return "?";
}

ReplaceMode parse_replace_mode(const std::string& s) {
  if (s == "lfr" || s == "LFR") return ReplaceMode::Lfr;
  if (s == "hfr" || s == "HFR") return ReplaceMode::Hfr;
  throw Error("unknown replacement mode '" + s + "' (expected lfr or hfr)");
}

Pairing parse_pairing(const std::string& s) {
  if (s == "index-aligned") return Pairing::IndexAligned;
  if (s == "cyclic") return Pairing::Cyclic;
  if (s == "random-within-task") return Pairing::RandomWithinTask;
  throw Error("unknown pairing '" + s + "' (expected index-aligned, cyclic or random-within-task)");
}

Real GammaDist::sample(Rng& rng) const {
  if (kind == Kind::Fixed) return a;
  return std::uniform_real_distribution<Real>(a, b)(rng);
}

std::string GammaDist::describe() const {
  std::ostringstream os;
  if (kind == Kind::Fixed)
    os << "fixed(" << a << ")";
  else
    os << "uniform(" << a << "," << b << ")";
  return os.str();
}

void LfrConfig::validate() const {
  if (gamma.kind == GammaDist::Kind::Fixed) {
    if (!(gamma.a >= 0 && gamma.a <= 1)) throw Error("lfr: fixed gamma must lie in [0,1]");
  } else if (!(gamma.a >= 0 && gamma.a <= gamma.b && gamma.b <= 1)) {
    throw Error("lfr: gamma range needs 0 <= a <= b <= 1");
  }
}

Real sample_radius(const LfrConfig& cfg, std::size_t height, std::size_t width, Rng& rng) {
  cfg.validate();
  return cfg.gamma.sample(rng) * static_cast<Real>(std::min(height, width));
}

Tensor replace_band(const Tensor& src, const Tensor& tar, Real radius, ReplaceMode mode, bool clamp) {
  if (src.rank() != 4 || src.shape() != tar.shape()) {
    throw Error("replace_band: source " + shape_str(src.shape()) + " and target " + shape_str(tar.shape()) +
                " must be matching [B,C,H,W] batches");
  }
  const std::size_t h = src.dim(2), w = src.dim(3), hw = h * w, planes = src.dim(0) * src.dim(1);
  std::vector<std::uint8_t> low(hw);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) low[u * w + v] = static_cast<Real>(chebyshev_from_dc(u, v, h, w)) <= radius;
  const bool take_low_from_target = mode == ReplaceMode::Lfr;

  Tensor out = Tensor::zeros(src.shape());
  auto sd = src.data(), td = tar.data();
  auto od = out.mutable_data();
  const Real inv = Real(1) / static_cast<Real>(hw);
  parallel_for(planes, [&](std::size_t begin, std::size_t end) {
    std::vector<Complex> a(hw), b(hw);
    for (std::size_t p = begin; p < end; ++p) {
      for (std::size_t i = 0; i < hw; ++i) {
        a[i] = Complex(sd[p * hw + i], 0);
        b[i] = Complex(td[p * hw + i], 0);
      }
      fft2d(a, h, w, false);
      fft2d(b, h, w, false);
      for (std::size_t i = 0; i < hw; ++i)
        if (static_cast<bool>(low[i]) == take_low_from_target) a[i] = b[i];
      fft2d(a, h, w, true);
      for (std::size_t i = 0; i < hw; ++i) {
        const Real v = a[i].real() * inv;
        od[p * hw + i] = clamp ? std::clamp(v, Real(0), Real(1)) : v;
      }
    }
  });
  return out;
}

namespace {

// Source/target image order used for pairing: for each class position, its
// support images then its queries. Returns flat indices into [support; query].
std::vector<std::vector<std::size_t>> class_sequences(const Episode& ep) {
  std::vector<std::vector<std::size_t>> seq(ep.n_way);
  for (std::size_t i = 0; i < ep.support_labels.size(); ++i) seq.at(ep.support_labels[i]).push_back(i);
  const std::size_t ns = ep.support_labels.size();
  for (std::size_t i = 0; i < ep.query_labels.size(); ++i) seq.at(ep.query_labels[i]).push_back(ns + i);
  return seq;
}

Tensor image_at(const Episode& ep, std::size_t flat) {
  const std::size_t ns = ep.support.dim(0);
  const Tensor& batch = flat < ns ? ep.support : ep.query;
  const std::size_t i = flat < ns ? flat : flat - ns;
  const std::size_t per = batch.numel() / batch.dim(0);
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  std::vector<Real> v(batch.data().begin() + static_cast<std::ptrdiff_t>(i * per),
                      batch.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  return Tensor::from_data(s, std::move(v));
}

}  // namespace

Episode apply_lfr_radius(const Episode& src, const Episode& tar, Real radius, ReplaceMode mode, Pairing pairing,
                         Rng& rng, LfrProvenance* provenance, bool clamp) {
  if (!src.support.defined() || !tar.support.defined()) throw Error("apply_lfr: empty episode");
  if (src.support.rank() != 4 || tar.support.rank() != 4 ||
      !std::equal(src.support.shape().begin() + 1, src.support.shape().end(), tar.support.shape().begin() + 1)) {
    throw Error("apply_lfr: image dims differ: source " + shape_str(src.support.shape()) + ", target " +
                shape_str(tar.support.shape()));
  }
  if (src.n_way != tar.n_way) {
    throw Error("apply_lfr: source is " + std::to_string(src.n_way) + "-way but target is " +
                std::to_string(tar.n_way) + "-way");
  }
  if (pairing == Pairing::IndexAligned && (src.k_shot != tar.k_shot || src.m_query != tar.m_query)) {
    throw Error("apply_lfr: index-aligned pairing needs equal episode sizes (source K=" + std::to_string(src.k_shot) +
                " M=" + std::to_string(src.m_query) + ", target K=" + std::to_string(tar.k_shot) +
                " M=" + std::to_string(tar.m_query) + ")");
  }

  const auto src_seq = class_sequences(src);
  const auto tar_seq = class_sequences(tar);
  const std::size_t n_src = src.support.dim(0) + src.query.dim(0);
  const std::size_t n_tar = tar.support.dim(0) + tar.query.dim(0);
  std::vector<std::size_t> pairs(n_src);
  if (pairing == Pairing::RandomWithinTask) {
    std::uniform_int_distribution<std::size_t> pick(0, n_tar - 1);
    for (auto& p : pairs) p = pick(rng);
  } else {
    for (std::size_t c = 0; c < src.n_way; ++c) {
      if (tar_seq[c].empty()) throw Error("apply_lfr: target class position " + std::to_string(c) + " is empty");
      for (std::size_t j = 0; j < src_seq[c].size(); ++j) pairs[src_seq[c][j]] = tar_seq[c][j % tar_seq[c].size()];
    }
  }

  // Gather the paired target images into batches shaped like the source.
  auto gather = [&](std::size_t offset, std::size_t count) {
    std::vector<Tensor> imgs;
    for (std::size_t i = 0; i < count; ++i) imgs.push_back(image_at(tar, pairs[offset + i]));
    return stack_images(imgs);
  };
  const std::size_t ns = src.support.dim(0);
  Episode out = src;
  out.domain = DomainTag::Pseudo;
  out.support = replace_band(src.support, gather(0, ns), radius, mode, clamp);
  out.query = replace_band(src.query, gather(ns, src.query.dim(0)), radius, mode, clamp);
  if (provenance) {
    provenance->radius = radius;
    provenance->mode = mode;
    provenance->pairing = pairing;
    provenance->pairs = std::move(pairs);
  }
  return out;
}

Episode apply_lfr(const Episode& src, const Episode& tar, const LfrConfig& cfg, Rng& rng, LfrProvenance* provenance) {
  cfg.validate();
  const Real gamma = cfg.gamma.sample(rng);
  const Real radius = gamma * static_cast<Real>(std::min(src.support.dim(2), src.support.dim(3)));
  Episode out = apply_lfr_radius(src, tar, radius, cfg.mode, cfg.pairing, rng, provenance);
  if (provenance) provenance->gamma = gamma;
  return out;
}

}  // namespace freqgrl
