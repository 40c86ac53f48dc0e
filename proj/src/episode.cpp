#include "freqgrl/episode.hpp"

#include <algorithm>
#include <numeric>

namespace freqgrl {

std::string to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::Source: return "source";
    case DomainTag::Target: return "target";
    case DomainTag::Pseudo: return "pseudo";
  }
  return "?";
}

EpisodeIndex sample_episode_index(const DatasetSplit& split, std::size_t n, std::size_t k, std::size_t m, Rng& rng) {
  if (n == 0 || k == 0 || m == 0) throw Error("sample_episode: n, k and m must be positive");
  if (split.classes.size() < n) {
    throw Error("sample_episode: split '" + split.name + "' has " + std::to_string(split.classes.size()) +
                " classes, need " + std::to_string(n));
  }
  for (const auto& c : split.classes) {
    if (c.refs.size() < k + m) {
      throw Error("sample_episode: class '" + c.id + "' in split '" + split.name + "' has " +
                  std::to_string(c.refs.size()) + " images, need k+m = " + std::to_string(k + m));
    }
  }
  std::vector<std::size_t> classes(split.classes.size());
  std::iota(classes.begin(), classes.end(), 0);
  std::shuffle(classes.begin(), classes.end(), rng);
  classes.resize(n);

  EpisodeIndex ep;
  ep.n_way = n;
  ep.k_shot = k;
  ep.m_query = m;
  for (std::size_t label = 0; label < n; ++label) {
    const ClassImages& cls = split.classes[classes[label]];
    ep.class_ids.push_back(cls.id);
    std::vector<std::size_t> refs = cls.refs;
    std::shuffle(refs.begin(), refs.end(), rng);
    for (std::size_t i = 0; i < k; ++i) {
      ep.support_refs.push_back(refs[i]);
      ep.support_labels.push_back(static_cast<int>(label));
    }
    for (std::size_t i = k; i < k + m; ++i) {
      ep.query_refs.push_back(refs[i]);
      ep.query_labels.push_back(static_cast<int>(label));
    }
  }
  return ep;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw Error("stack_images: no images");
  const Shape& s = images.front().shape();
  Shape out_shape{images.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor out = Tensor::zeros(out_shape);
  auto d = out.mutable_data();
  const std::size_t per = images.front().numel();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) {
      throw Error("stack_images: image " + std::to_string(i) + " has shape " + shape_str(images[i].shape()) +
                  ", expected " + shape_str(s));
    }
    std::copy(images[i].data().begin(), images[i].data().end(), d.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

Episode materialize(const DatasetSplit& split, const EpisodeIndex& index, DomainTag tag) {
  auto load = [&](const std::vector<std::size_t>& refs) {
    std::vector<Tensor> imgs;
    imgs.reserve(refs.size());
    for (std::size_t r : refs) imgs.push_back(split.image(r));
    return stack_images(imgs);
  };
  Episode ep;
  ep.n_way = index.n_way;
  ep.k_shot = index.k_shot;
  ep.m_query = index.m_query;
  ep.support = load(index.support_refs);
  ep.query = load(index.query_refs);
  ep.support_labels = index.support_labels;
  ep.query_labels = index.query_labels;
  ep.domain = tag;
  ep.class_ids = index.class_ids;
  ep.support_refs = index.support_refs;
  ep.query_refs = index.query_refs;
  return ep;
}

Episode sample_episode(const DatasetSplit& split, std::size_t n, std::size_t k, std::size_t m, Rng& rng,
                       DomainTag tag) {
  return materialize(split, sample_episode_index(split, n, k, m, rng), tag);
}

}  // namespace freqgrl
