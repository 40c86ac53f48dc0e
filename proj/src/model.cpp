#include "freqgrl/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace freqgrl {

using nlohmann::json;

std::size_t BackboneConfig::block_size(std::size_t l) const {
  std::size_t s = input_size;
  for (std::size_t i = 0; i <= l; ++i) s = (s - 1) / 2 + 1;  // 3x3 or 1x1 conv, stride 2, same padding
  return s;
}

void BackboneConfig::validate() const {
  if (input_size < 2) throw Error("backbone: input_size must be at least 2");
  if (stem_channels == 0) throw Error("backbone: stem_channels must be positive");
  for (std::size_t c : block_channels)
    if (c == 0) throw Error("backbone: block_channels must be positive");
  hfe.validate();
}

std::string to_string(HeadKind head) { return head == HeadKind::Proto ? "proto" : "gnn"; }

HeadKind parse_head(const std::string& s) {
  if (s == "proto") return HeadKind::Proto;
  if (s == "gnn") return HeadKind::Gnn;
  throw Error("unknown head '" + s + "' (expected proto or gnn)");
}

void ModelConfig::set_hfe(bool on) { backbone.hfe_enabled.fill(on); }
void ModelConfig::set_gff(bool on) { backbone.gff_enabled.fill(on); }

void to_json(json& j, const ModelConfig& c) {
  const auto& b = c.backbone;
  j = json{{"block_channels", b.block_channels},
           {"stem_channels", b.stem_channels},
           {"input_size", b.input_size},
           {"hfe_enabled", b.hfe_enabled},
           {"gff_enabled", b.gff_enabled},
           {"hfe_band", {b.hfe.band_lo, b.hfe.band_hi}},
           {"hfe_input", to_string(b.hfe.input)},
           {"head", to_string(c.head)},
           {"n_way", c.n_way}};
}

void from_json(const json& j, ModelConfig& c) {
  auto& b = c.backbone;
  auto flags = [](const json& v) {
    std::array<bool, 4> out{};
    if (v.is_boolean()) {
      out.fill(v.get<bool>());
    } else {
      out = v.get<std::array<bool, 4>>();
    }
    return out;
  };
  try {
    if (j.contains("block_channels")) b.block_channels = j.at("block_channels").get<std::array<std::size_t, 4>>();
    if (j.contains("stem_channels")) b.stem_channels = j.at("stem_channels").get<std::size_t>();
    if (j.contains("input_size")) b.input_size = j.at("input_size").get<std::size_t>();
    if (j.contains("hfe_enabled")) b.hfe_enabled = flags(j.at("hfe_enabled"));
    if (j.contains("gff_enabled")) b.gff_enabled = flags(j.at("gff_enabled"));
    if (j.contains("hfe_band")) {
      const auto band = j.at("hfe_band").get<std::array<Real, 2>>();
      b.hfe.band_lo = band[0];
      b.hfe.band_hi = band[1];
    }
    if (j.contains("hfe_input")) b.hfe.input = parse_hfe_input(j.at("hfe_input").get<std::string>());
    if (j.contains("head")) c.head = parse_head(j.at("head").get<std::string>());
    if (j.contains("n_way")) c.n_way = j.at("n_way").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(std::string("model config: ") + e.what());
  }
  b.validate();
}

// ---------------------------------------------------------------- heads

namespace {

// [N, N*K] matrix averaging the support rows of each class.
Tensor class_average(std::span<const int> labels, std::size_t n_way) {
  std::vector<std::size_t> count(n_way, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_way) throw Error("support label out of range");
    ++count[static_cast<std::size_t>(l)];
  }
  for (std::size_t c = 0; c < n_way; ++c)
    if (count[c] == 0) throw Error("class " + std::to_string(c) + " has no support samples");
  Tensor avg = Tensor::zeros({n_way, labels.size()});
  auto d = avg.mutable_data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    d[c * labels.size() + i] = Real(1) / static_cast<Real>(count[c]);
  }
  return avg;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row_bias(matmul(x, w), b); }

}  // namespace

Tensor proto_logits(const Tensor& support_emb, std::span<const int> support_labels, const Tensor& query_emb,
                    std::size_t n_way) {
  if (support_emb.rank() != 2 || query_emb.rank() != 2 || support_emb.dim(1) != query_emb.dim(1)) {
    throw Error("proto head: embeddings must be [n, D] with equal D");
  }
  if (support_labels.size() != support_emb.dim(0)) throw Error("proto head: label count mismatch");
  Tensor protos = matmul(class_average(support_labels, n_way), support_emb);
  return scale(squared_distances(query_emb, protos), -1);
}

GnnHead::GnnHead(std::size_t embed_dim, std::size_t n_way, Rng& rng) : embed_dim_(embed_dim), n_way_(n_way) {
  const std::size_t hidden = std::max<std::size_t>(embed_dim / 2, 4);
  std::size_t in = embed_dim + n_way;
  for (auto& layer : layers) {
    const std::size_t edge_hidden = std::max<std::size_t>(in / 2, 4);
    // Nonnegative first map and nonpositive second map: the initial edge score
    // falls with |x_i - x_j|, so sigmoid(score) starts as a similarity.
    layer.edge_w1 = he_normal({in, edge_hidden}, in, rng);
    for (auto& v : layer.edge_w1.mutable_data()) v = std::abs(v);
    layer.edge_b1 = Tensor::zeros({edge_hidden});
    layer.edge_w2 = he_normal({edge_hidden, 1}, edge_hidden, rng);
    for (auto& v : layer.edge_w2.mutable_data()) v = -std::abs(v);
    layer.edge_b2 = Tensor::zeros({1});
    layer.node_w = he_normal({2 * in, hidden}, 2 * in, rng);
    layer.node_b = Tensor::zeros({hidden});
    in += hidden;  // dense: each layer appends its output to its input
  }
  // The readout sees [A x | x]. Small random weights, plus an identity from
  // the aggregated label code to the logits: at initialization a query is
  // scored by the similarity-weighted vote of its labelled neighbours.
  std::normal_distribution<Real> small(0, Real(0.01));
  out_w = Tensor::zeros({2 * in, n_way});
  auto ow = out_w.mutable_data();
  for (auto& v : ow) v = small(rng);
  for (std::size_t c = 0; c < n_way; ++c) ow[(embed_dim + c) * n_way + c] += kVoteScale;
  out_b = Tensor::zeros({n_way});
  NamedTensors all;
  collect_parameters("", all);
  for (auto& [name, t] : all) t.set_requires_grad(true);
}

Tensor GnnHead::logits(const Tensor& support_emb, std::span<const int> support_labels, const Tensor& query_emb) const {
  const std::size_t ns = support_emb.dim(0), nq = query_emb.dim(0), n = ns + nq;
  if (support_emb.dim(1) != embed_dim_ || query_emb.dim(1) != embed_dim_) {
    throw Error("gnn head: embedding width " + std::to_string(support_emb.dim(1)) + " != " + std::to_string(embed_dim_));
  }
  if (support_labels.size() != ns) throw Error("gnn head: label count mismatch");
  if (n < 2) throw Error("gnn head: needs at least two nodes");
  Tensor code = Tensor::zeros({n, n_way_});
  auto cd = code.mutable_data();
  for (std::size_t i = 0; i < ns; ++i) {
    const int l = support_labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= n_way_) throw Error("gnn head: support label out of range");
    cd[i * n_way_ + static_cast<std::size_t>(l)] = 1;
  }
  for (std::size_t i = ns; i < n; ++i)
    for (std::size_t c = 0; c < n_way_; ++c) cd[i * n_way_ + c] = Real(1) / static_cast<Real>(n_way_);

  // no self loops: a node's own features enter through the concatenation
  std::vector<Real> off_diag(n * n, Real(1));
  for (std::size_t i = 0; i < n; ++i) off_diag[i * n + i] = 0;

  Tensor x = concat({concat({support_emb, query_emb}, 0), code}, 1);
  Tensor adj;
  for (const auto& layer : layers) {
    Tensor e = relu(linear(pairwise_abs_diff(x), layer.edge_w1, layer.edge_b1));
    Tensor w = mul_const(reshape(sigmoid(linear(e, layer.edge_w2, layer.edge_b2)), {n, n}), off_diag);
    adj = row_normalize(w);
    x = concat({x, relu(linear(concat({matmul(adj, x), x}, 1), layer.node_w, layer.node_b))}, 1);
  }
  return linear(slice(concat({matmul(adj, x), x}, 1), 0, ns, n), out_w, out_b);
}

void GnnHead::collect_parameters(const std::string& prefix, NamedTensors& out) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "edge.w1", layers[l].edge_w1);
    out.emplace_back(p + "edge.b1", layers[l].edge_b1);
    out.emplace_back(p + "edge.w2", layers[l].edge_w2);
    out.emplace_back(p + "edge.b2", layers[l].edge_b2);
    out.emplace_back(p + "node.w", layers[l].node_w);
    out.emplace_back(p + "node.b", layers[l].node_b);
  }
  out.emplace_back(prefix + "out.w", out_w);
  out.emplace_back(prefix + "out.b", out_b);
}

// ---------------------------------------------------------------- model

FewShotModel::ConvBn FewShotModel::make_conv_bn(std::size_t cin, std::size_t cout, std::size_t k, Rng& rng) {
  return {he_normal({cout, cin, k, k}, cin * k * k, rng), Tensor::full({cout}, 1), Tensor::zeros({cout}),
          BatchNormState(cout)};
}

Tensor FewShotModel::apply(ConvBn& cb, const Tensor& x, std::size_t stride, std::size_t pad) {
  return batchnorm2d(conv2d(x, cb.w, Tensor(), stride, pad), cb.gamma, cb.beta, cb.bn,
                     training_ ? BnMode::Train : BnMode::Eval);
}

FewShotModel::FewShotModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.backbone.validate();
  const auto& b = cfg_.backbone;
  // HFE layers draw from their own streams, so toggling them leaves the
  // backbone and head initialization unchanged for a given seed.
  Rng rng = derive_rng(seed, Stream::Init);
  stem_ = make_conv_bn(3, b.stem_channels, 3, rng);
  std::size_t cin = b.stem_channels;
  for (std::size_t l = 0; l < 4; ++l) {
    const std::size_t cout = b.block_channels[l], s = b.block_size(l);
    Block blk;
    blk.conv1 = make_conv_bn(cin, cout, 3, rng);
    blk.conv2 = make_conv_bn(cout, cout, 3, rng);
    blk.shortcut = make_conv_bn(cin, cout, 1, rng);
    if (b.hfe_enabled[l]) {
      Rng hfe_rng = derive_rng(seed, Stream::Init, 1 + l);
      blk.hfe = std::make_unique<HfeLayer>(cout, s, s, b.hfe, hfe_rng);
    }
    if (b.gff_enabled[l]) blk.gff = std::make_unique<GffLayer>(cout, s, s);
    blocks_.push_back(std::move(blk));
    cin = cout;
  }
  if (cfg_.head == HeadKind::Gnn) gnn_ = std::make_unique<GnnHead>(embed_dim(), cfg_.n_way, rng);
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(true);
}

Tensor FewShotModel::features(const Tensor& images) {
  const auto& b = cfg_.backbone;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != b.input_size || images.dim(3) != b.input_size) {
    throw Error("embed: images " + shape_str(images.shape()) + " do not match [B,3," + std::to_string(b.input_size) +
                "," + std::to_string(b.input_size) + "]");
  }
  const BnMode mode = training_ ? BnMode::Train : BnMode::Eval;
  Tensor x = relu(apply(stem_, images, 1, 1));
  for (auto& blk : blocks_) {
    Tensor sc = apply(blk.shortcut, x, 2, 0);
    Tensor main = apply(blk.conv2, relu(apply(blk.conv1, x, 2, 1)), 1, 1);
    Tensor f = relu(add(main, sc));
    if (blk.hfe) f = blk.hfe->forward(sc, f, mode);
    if (blk.gff) f = blk.gff->forward(f);
    x = f;
  }
  return x;
}

Tensor FewShotModel::embed(const Tensor& images) { return global_avg_pool(features(images)); }

Tensor FewShotModel::head_logits(const Tensor& support_emb, std::span<const int> support_labels,
                                 const Tensor& query_emb, std::size_t n_way) const {
  if (cfg_.head == HeadKind::Proto) return proto_logits(support_emb, support_labels, query_emb, n_way);
  if (n_way != gnn_->n_way()) {
    throw Error("gnn head was built for " + std::to_string(gnn_->n_way()) + "-way tasks, got " + std::to_string(n_way));
  }
  return gnn_->logits(support_emb, support_labels, query_emb);
}

EpisodeLogits FewShotModel::predict(const Tensor& support, std::span<const int> support_labels, const Tensor& query,
                                    std::span<const int> query_labels, std::size_t n_way) {
  const std::size_t ns = support.dim(0);
  Tensor emb = embed(concat({support, query}, 0));
  Tensor logits = head_logits(slice(emb, 0, 0, ns), support_labels, slice(emb, 0, ns, emb.dim(0)), n_way);
  return {softmax(logits), std::vector<int>(query_labels.begin(), query_labels.end())};
}

NamedTensors FewShotModel::collect(bool params) {
  NamedTensors out;
  auto add_cb = [&](const std::string& p, ConvBn& cb) {
    if (params) {
      out.emplace_back(p + ".weight", cb.w);
      out.emplace_back(p + ".bn.weight", cb.gamma);
      out.emplace_back(p + ".bn.bias", cb.beta);
    } else {
      out.emplace_back(p + ".bn.running_mean", cb.bn.running_mean);
      out.emplace_back(p + ".bn.running_var", cb.bn.running_var);
    }
  };
  add_cb("stem", stem_);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string p = "block" + std::to_string(l);
    add_cb(p + ".conv1", blocks_[l].conv1);
    add_cb(p + ".conv2", blocks_[l].conv2);
    add_cb(p + ".shortcut", blocks_[l].shortcut);
    if (blocks_[l].hfe) {
      if (params)
        blocks_[l].hfe->collect_parameters(p + ".hfe.", out);
      else
        blocks_[l].hfe->collect_buffers(p + ".hfe.", out);
    }
    if (blocks_[l].gff && params) blocks_[l].gff->collect_parameters(p + ".gff.", out);
  }
  if (gnn_ && params) gnn_->collect_parameters("gnn.", out);
  return out;
}

NamedTensors FewShotModel::named_parameters() { return collect(true); }
NamedTensors FewShotModel::named_buffers() { return collect(false); }

std::vector<Tensor> FewShotModel::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void FewShotModel::save(const std::filesystem::path& path) {
  NamedTensors all = named_parameters();
  for (auto& nb : named_buffers()) all.push_back(nb);
  save_checkpoint(path, all);
}

void FewShotModel::load(const std::filesystem::path& path) {
  std::map<std::string, Tensor> stored;
  for (auto& [name, t] : load_checkpoint(path)) stored[name] = t;
  NamedTensors all = named_parameters();
  for (auto& nb : named_buffers()) all.push_back(nb);
  for (auto& [name, t] : all) {
    auto it = stored.find(name);
    if (it == stored.end()) throw Error("checkpoint " + path.string() + " lacks tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw Error("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) + ", model expects " +
                  shape_str(t.shape()));
    }
    std::copy(it->second.data().begin(), it->second.data().end(), t.mutable_data().begin());
    stored.erase(it);
  }
  // Leftovers mean the checkpoint came from a different module layout.
  if (!stored.empty()) {
    throw Error("checkpoint " + path.string() + " has tensor '" + stored.begin()->first +
                "' that this model does not define (HFE/GFF settings differ?)");
  }
}

}  // namespace freqgrl
