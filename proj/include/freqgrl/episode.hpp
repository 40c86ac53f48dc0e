#pragma once

#include <string>
#include <vector>

#include "freqgrl/data.hpp"
#include "freqgrl/rng.hpp"
#include "freqgrl/tensor.hpp"

namespace freqgrl {

enum class DomainTag { Source, Target, Pseudo };

std::string to_string(DomainTag tag);

/// Image references and episode-local labels of one N-way K-shot task, in
/// class-major order (all K of class 0, then class 1, ...).
struct EpisodeIndex {
  std::size_t n_way = 0, k_shot = 0, m_query = 0;
  std::vector<std::size_t> support_refs, query_refs;
  std::vector<int> support_labels, query_labels;
  std::vector<std::string> class_ids;
};

struct Episode {
  std::size_t n_way = 0, k_shot = 0, m_query = 0;
  Tensor support;  // [N*K, 3, H, W]
  Tensor query;    // [N*M, 3, H, W]
  std::vector<int> support_labels, query_labels;
  DomainTag domain = DomainTag::Source;
  std::vector<std::string> class_ids;
  std::vector<std::size_t> support_refs, query_refs;
};

/// Classes without replacement, then K+M images without replacement inside
/// each class. Throws when the split has fewer than n classes or any class
/// holds fewer than k+m images.
EpisodeIndex sample_episode_index(const DatasetSplit& split, std::size_t n, std::size_t k, std::size_t m, Rng& rng);

Episode materialize(const DatasetSplit& split, const EpisodeIndex& index, DomainTag tag);

Episode sample_episode(const DatasetSplit& split, std::size_t n, std::size_t k, std::size_t m, Rng& rng,
                       DomainTag tag = DomainTag::Source);

/// Stacks [C,H,W] images into [B,C,H,W].
Tensor stack_images(const std::vector<Tensor>& images);

}  // namespace freqgrl
