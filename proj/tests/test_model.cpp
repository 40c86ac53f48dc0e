#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "freqgrl/model.hpp"
#include "test_util.hpp"

using namespace freqgrl;
using freqgrl::testing::check_gradients;
using freqgrl::testing::max_abs_diff;
using freqgrl::testing::random_tensor;
using freqgrl::testing::weighted_sum;

namespace {

ModelConfig small_config(bool modules) {
  ModelConfig cfg;
  cfg.backbone.block_channels = {4, 8, 8, 8};
  cfg.backbone.stem_channels = 4;
  cfg.backbone.input_size = 16;
  cfg.set_hfe(modules);
  cfg.set_gff(modules);
  cfg.n_way = 3;
  return cfg;
}

std::vector<int> labels_for(std::size_t n, std::size_t per_class) {
  std::vector<int> out;
  for (std::size_t c = 0; c < n; ++c) out.insert(out.end(), per_class, static_cast<int>(c));
  return out;
}

void expect_row_stochastic(const Tensor& probs) {
  const std::size_t rows = probs.dim(0), cols = probs.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    Real s = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const Real p = probs.data()[r * cols + c];
      EXPECT_GE(p, 0);
      s += p;
    }
    EXPECT_NEAR(s, 1, 1e-6);
  }
}

}  // namespace

TEST(Backbone, ModulesAtInitMatchPlainBackbone) {
  std::mt19937_64 gen(1);
  Tensor images = random_tensor({6, 3, 16, 16}, gen, 0, 1);
  for (bool training : {true, false}) {
    FewShotModel plain(small_config(false), 3), full(small_config(true), 3);
    plain.set_training(training);
    full.set_training(training);
    EXPECT_LT(max_abs_diff(plain.embed(images).data(), full.embed(images).data()), 1e-5);
  }
}

TEST(Backbone, DisabledModulesReduceExactlyToBaseline) {
  ModelConfig with_band = small_config(false);
  with_band.backbone.hfe.band_lo = Real(0.3);  // irrelevant when HFE is off
  FewShotModel a(small_config(false), 5), b(with_band, 5);
  auto pa = a.named_parameters(), pb = b.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(max_abs_diff(pa[i].second.data(), pb[i].second.data()), 0);
  }
  for (const auto& [name, t] : pa) {
    EXPECT_EQ(name.find("hfe"), std::string::npos) << name;
    EXPECT_EQ(name.find("gff"), std::string::npos) << name;
  }
}

TEST(Backbone, EnablingModulesKeepsBackboneInit) {
  FewShotModel plain(small_config(false), 9), full(small_config(true), 9);
  NamedTensors pf = full.named_parameters();
  for (const auto& [name, t] : plain.named_parameters()) {
    auto it = std::find_if(pf.begin(), pf.end(), [&](const auto& p) { return p.first == name; });
    ASSERT_NE(it, pf.end()) << name;
    EXPECT_EQ(max_abs_diff(t.data(), it->second.data()), 0) << name;
  }
}

TEST(Backbone, IdenticalImagesGiveIdenticalEmbeddings) {
  std::mt19937_64 gen(2);
  Tensor one = random_tensor({1, 3, 16, 16}, gen, 0, 1);
  FewShotModel model(small_config(true), 1);
  model.set_training(false);
  Tensor e = model.embed(concat({one, one, random_tensor({1, 3, 16, 16}, gen, 0, 1)}, 0));
  const std::size_t d = model.embed_dim();
  for (std::size_t i = 0; i < d; ++i) EXPECT_EQ(e.data()[i], e.data()[d + i]);
}

TEST(Backbone, DeterministicForSeed) {
  std::mt19937_64 gen(3);
  Tensor images = random_tensor({4, 3, 16, 16}, gen, 0, 1);
  FewShotModel a(small_config(true), 11), b(small_config(true), 11), c(small_config(true), 12);
  Tensor ea = a.embed(images), eb = b.embed(images), ec = c.embed(images);
  EXPECT_EQ(max_abs_diff(ea.data(), eb.data()), 0);
  EXPECT_GT(max_abs_diff(ea.data(), ec.data()), 1e-6);
}

TEST(Backbone, PermutationEquivariantOverBatch) {
  std::mt19937_64 gen(4);
  FewShotModel model(small_config(true), 2);
  for (bool training : {true, false}) {
    model.set_training(training);
    Tensor images = random_tensor({5, 3, 16, 16}, gen, 0, 1);
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<Tensor> parts;
    for (std::size_t p : perm) parts.push_back(slice(images, 0, p, p + 1));
    Tensor e = model.embed(images), ep = model.embed(concat(parts, 0));
    const std::size_t d = model.embed_dim();
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(ep.data()[i * d + j], e.data()[perm[i] * d + j], 1e-10);
  }
}

TEST(Backbone, GradientReachesEveryParameter) {
  ModelConfig cfg = small_config(true);
  cfg.backbone.input_size = 32;  // smallest block map 2x2 keeps a nonempty HFE band
  FewShotModel model(cfg, 4);
  for (std::size_t l = 0; l < 4; ++l)
    for (auto& v : model.hfe(l)->post_gamma.mutable_data()) v = Real(0.1);
  std::mt19937_64 gen(5);
  Tensor support = random_tensor({3, 3, 32, 32}, gen, 0, 1), query = random_tensor({6, 3, 32, 32}, gen, 0, 1);
  const auto sl = labels_for(3, 1), ql = labels_for(3, 2);
  for (auto& p : model.parameters()) p.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor emb = model.embed(concat({support, query}, 0));
    cross_entropy(model.head_logits(slice(emb, 0, 0, 3), sl, slice(emb, 0, 3, 9), 3), ql).backward();
  }
  for (auto& [name, p] : model.named_parameters()) {
    Real norm = 0;
    for (Real g : p.grad()) norm += g * g;
    EXPECT_GT(norm, 0) << name;
  }
}

TEST(Backbone, RejectsWrongInputSize) {
  FewShotModel model(small_config(false), 0);
  std::mt19937_64 gen(0);
  EXPECT_THROW(model.embed(random_tensor({1, 3, 8, 8}, gen)), Error);
  EXPECT_THROW(model.embed(random_tensor({1, 1, 16, 16}, gen)), Error);
}

TEST(Backbone, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "freqgrl_model_test";
  std::filesystem::create_directories(dir);
  std::mt19937_64 gen(6);
  Tensor images = random_tensor({2, 3, 16, 16}, gen, 0, 1);
  FewShotModel a(small_config(true), 1), b(small_config(true), 2);
  a.embed(images);  // move the running statistics
  a.set_training(false);
  b.set_training(false);
  a.save(dir / "m.ckpt");
  b.load(dir / "m.ckpt");
  EXPECT_EQ(max_abs_diff(a.embed(images).data(), b.embed(images).data()), 0);
  FewShotModel other(small_config(false), 1);
  EXPECT_THROW(other.load(dir / "m.ckpt"), Error);
  std::filesystem::remove_all(dir);
}

TEST(ProtoHead, TwoWayExample) {
  // Query at the origin, prototypes at distance 1 and 3.
  Tensor s = Tensor::from_data({2, 2}, {1, 0, 0, 3});
  Tensor q = Tensor::from_data({1, 2}, {0, 0});
  const std::vector<int> labels{0, 1};
  Tensor p = softmax(proto_logits(s, labels, q, 2));
  EXPECT_NEAR(p.data()[0], 0.99966, 1e-5);
  EXPECT_NEAR(p.data()[1], 0.00034, 1e-5);
}

TEST(ProtoHead, IdenticalEmbeddingsGiveUniform) {
  Tensor s = Tensor::full({6, 4}, Real(0.3)), q = Tensor::full({3, 4}, Real(0.3));
  Tensor p = softmax(proto_logits(s, labels_for(3, 2), q, 3));
  for (Real v : p.data()) EXPECT_NEAR(v, 1.0 / 3, 1e-12);
}

TEST(ProtoHead, QueryEqualToSupportWins) {
  std::mt19937_64 gen(7);
  Tensor s = random_tensor({4, 6}, gen, -5, 5);
  for (std::size_t c = 0; c < 4; ++c) {
    Tensor q = slice(s, 0, c, c + 1);
    Tensor logits = proto_logits(s, labels_for(4, 1), q, 4);
    auto d = logits.data();
    EXPECT_EQ(static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin()), c);
  }
}

TEST(ProtoHead, ArgmaxInvariantToPositiveScaling) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<Real> factor(Real(0.01), 100);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor s = random_tensor({10, 5}, gen), q = random_tensor({7, 5}, gen);
    const Real a = factor(gen);
    Tensor l1 = proto_logits(s, labels_for(5, 2), q, 5), l2 = proto_logits(scale(s, a), labels_for(5, 2), scale(q, a), 5);
    for (std::size_t r = 0; r < 7; ++r) {
      auto row1 = l1.data().subspan(r * 5, 5), row2 = l2.data().subspan(r * 5, 5);
      EXPECT_EQ(std::max_element(row1.begin(), row1.end()) - row1.begin(),
                std::max_element(row2.begin(), row2.end()) - row2.begin());
    }
  }
}

TEST(ProtoHead, MissingClassIsAnError) {
  Tensor s = Tensor::zeros({2, 3}), q = Tensor::zeros({1, 3});
  EXPECT_THROW(proto_logits(s, std::vector<int>{0, 0}, q, 2), Error);
}

TEST(GnnHead, RowsSumToOne) {
  std::mt19937_64 gen(9);
  Rng rng(1);
  GnnHead head(8, 4, rng);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor s = random_tensor({8, 8}, gen), q = random_tensor({12, 8}, gen);
    Tensor p = softmax(head.logits(s, labels_for(4, 2), q));
    EXPECT_EQ(p.shape(), (Shape{12, 4}));
    expect_row_stochastic(p);
  }
}

TEST(GnnHead, SupportOrderWithinClassDoesNotMatter) {
  std::mt19937_64 gen(10);
  Rng rng(2);
  GnnHead head(6, 3, rng);
  Tensor s = random_tensor({9, 6}, gen), q = random_tensor({6, 6}, gen);
  const auto labels = labels_for(3, 3);
  Tensor base = head.logits(s, labels, q);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor> rows;
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<std::size_t> idx{0, 1, 2};
      std::shuffle(idx.begin(), idx.end(), gen);
      for (std::size_t i : idx) rows.push_back(slice(s, 0, c * 3 + i, c * 3 + i + 1));
    }
    Tensor permuted = head.logits(concat(rows, 0), labels, q);
    EXPECT_LT(max_abs_diff(base.data(), permuted.data()), 1e-6);
  }
}

TEST(GnnHead, QueryEqualToIsolatedSupportTakesItsClass) {
  // Support points far apart; each query sits on one of them.
  Rng rng(3);
  GnnHead head(4, 4, rng);
  std::vector<Real> sv(16, 0);
  for (std::size_t c = 0; c < 4; ++c) sv[c * 4 + c] = 10;
  Tensor s = Tensor::from_data({4, 4}, sv);
  Tensor p = softmax(head.logits(s, labels_for(4, 1), s));
  for (std::size_t c = 0; c < 4; ++c) {
    auto row = p.data().subspan(c * 4, 4);
    EXPECT_EQ(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()), c);
    EXPECT_GT(row[c], 0.5);
  }
}

TEST(GnnHead, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(11);
  Rng rng(4);
  GnnHead head(6, 3, rng);
  Tensor s = random_tensor({6, 6}, gen), q = random_tensor({6, 6}, gen);
  const auto labels = labels_for(3, 2), ql = labels_for(3, 2);
  std::vector<Tensor> leaves{s, q, head.out_w, head.out_b};
  for (auto& l : head.layers)
    for (Tensor* t : {&l.edge_w1, &l.edge_b1, &l.edge_w2, &l.edge_b2, &l.node_w, &l.node_b}) leaves.push_back(*t);
  auto r = check_gradients([&] { return cross_entropy(head.logits(s, labels, q), ql); }, leaves);
  EXPECT_LT(r.worst, 1e-4);
}

TEST(GnnHead, NeedsAtLeastTwoNodes) {
  Rng rng(5);
  GnnHead head(3, 1, rng);
  EXPECT_THROW(head.logits(Tensor::zeros({1, 3}), std::vector<int>{0}, Tensor::zeros({0, 3})), Error);
}

TEST(FewShotModel, PredictIsRowStochasticForBothHeads) {
  std::mt19937_64 gen(12);
  for (HeadKind kind : {HeadKind::Proto, HeadKind::Gnn}) {
    ModelConfig cfg = small_config(true);
    cfg.head = kind;
    FewShotModel model(cfg, 6);
    model.set_training(false);
    Tensor s = random_tensor({3, 3, 16, 16}, gen, 0, 1), q = random_tensor({9, 3, 16, 16}, gen, 0, 1);
    EpisodeLogits out = model.predict(s, labels_for(3, 1), q, labels_for(3, 3), 3);
    EXPECT_EQ(out.probs.shape(), (Shape{9, 3}));
    EXPECT_EQ(out.query_labels, labels_for(3, 3));
    expect_row_stochastic(out.probs);
  }
}
