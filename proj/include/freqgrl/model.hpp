#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "freqgrl/checkpoint.hpp"
#include "freqgrl/freq_layers.hpp"
#include "freqgrl/ops.hpp"
#include "freqgrl/rng.hpp"
#include "json.hpp"

namespace freqgrl {

struct BackboneConfig {
  std::array<std::size_t, 4> block_channels{16, 32, 64, 64};
  std::size_t stem_channels = 16;
  std::size_t input_size = 32;
  std::array<bool, 4> hfe_enabled{false, false, false, false};
  std::array<bool, 4> gff_enabled{false, false, false, false};
  HfeConfig hfe;

  /// Spatial size after block l (0-based).
  std::size_t block_size(std::size_t l) const;
  void validate() const;
};

enum class HeadKind { Proto, Gnn };

std::string to_string(HeadKind head);
HeadKind parse_head(const std::string& s);

struct ModelConfig {
  BackboneConfig backbone;
  HeadKind head = HeadKind::Gnn;
  std::size_t n_way = 5;  // GNN output width

  void set_hfe(bool on);
  void set_gff(bool on);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct EpisodeLogits {
  Tensor probs;  // [N*M, N]
  std::vector<int> query_labels;
};

/// Prototype logits: -||q - mean_k(s_c)||^2. Throws when a class has no
/// support sample.
Tensor proto_logits(const Tensor& support_emb, std::span<const int> support_labels, const Tensor& query_emb,
                    std::size_t n_way);

/// Two-layer few-shot GNN. Node features are [embedding | label code], with a
/// one-hot code for support nodes and 1/N for queries. Each layer learns edge
/// weights from |x_i - x_j| (two linear maps, sigmoid output, self loops
/// removed, row-normalized) and appends relu(W [A x | x] + b) to the node
/// features. The readout is a linear map of [A x | x] (last adjacency) to N
/// logits per query node.
class GnnHead {
 public:
  static constexpr Real kVoteScale = 10;

  GnnHead(std::size_t embed_dim, std::size_t n_way, Rng& rng);

  Tensor logits(const Tensor& support_emb, std::span<const int> support_labels, const Tensor& query_emb) const;
  void collect_parameters(const std::string& prefix, NamedTensors& out);
  std::size_t n_way() const { return n_way_; }

  struct Layer {
    Tensor edge_w1, edge_b1, edge_w2, edge_b2, node_w, node_b;
  };
  std::array<Layer, 2> layers;
  Tensor out_w, out_b;

 private:
  std::size_t embed_dim_, n_way_;
};

/// Residual backbone with optional HFE/GFF per block and a metric head.
///   stem:  conv3x3(3 -> c0) + BN + ReLU
///   block: main = conv3x3/2 + BN + ReLU + conv3x3 + BN, sc = conv1x1/2 + BN,
///          f = relu(main + sc) [+ HFE(sc)] -> [GFF]
class FewShotModel {
 public:
  explicit FewShotModel(ModelConfig cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }
  std::size_t embed_dim() const { return cfg_.backbone.block_channels[3]; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  /// [B,3,H,W] -> [B,D].
  Tensor embed(const Tensor& images);
  /// Final-block feature maps before pooling.
  Tensor features(const Tensor& images);
  Tensor head_logits(const Tensor& support_emb, std::span<const int> support_labels, const Tensor& query_emb,
                     std::size_t n_way) const;
  EpisodeLogits predict(const Tensor& support, std::span<const int> support_labels, const Tensor& query,
                        std::span<const int> query_labels, std::size_t n_way);

  NamedTensors named_parameters();
  std::vector<Tensor> parameters();
  NamedTensors named_buffers();

  HfeLayer* hfe(std::size_t block) { return blocks_.at(block).hfe.get(); }
  GffLayer* gff(std::size_t block) { return blocks_.at(block).gff.get(); }
  GnnHead* gnn() { return gnn_.get(); }

  void save(const std::filesystem::path& path);
  /// Loads parameters and buffers by name; names and shapes must match exactly.
  void load(const std::filesystem::path& path);

 private:
  struct ConvBn {
    Tensor w, gamma, beta;
    BatchNormState bn;
  };
  struct Block {
    ConvBn conv1, conv2, shortcut;
    std::unique_ptr<HfeLayer> hfe;
    std::unique_ptr<GffLayer> gff;
  };

  ConvBn make_conv_bn(std::size_t cin, std::size_t cout, std::size_t k, Rng& rng);
  Tensor apply(ConvBn& cb, const Tensor& x, std::size_t stride, std::size_t pad);
  NamedTensors collect(bool params);

  ModelConfig cfg_;
  bool training_ = true;
  ConvBn stem_;
  std::vector<Block> blocks_;
  std::unique_ptr<GnnHead> gnn_;
};

}  // namespace freqgrl
