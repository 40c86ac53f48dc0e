#include "freqgrl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace freqgrl {

using nlohmann::json;

void TrainConfig::validate() const {
  if (n_way < 2) throw Error("train config: n_way must be at least 2");
  if (k_shot == 0) throw Error("train config: k_shot must be positive");
  if (m_query == 0 || target_m_query == 0) throw Error("train config: m_query must be positive");
  if (!(lr > 0)) throw Error("train config: lr must be positive");
  if (!loss_terms.any()) throw Error("train config: all loss terms are disabled");
  lfr.validate();
}

void to_json(json& j, const TrainConfig& c) {
  json gamma = c.lfr.gamma.kind == GammaDist::Kind::Fixed ? json{{"fixed", c.lfr.gamma.a}}
                                                          : json{{"uniform", {c.lfr.gamma.a, c.lfr.gamma.b}}};
  j = json{{"n_way", c.n_way},
           {"k_shot", c.k_shot},
           {"m_query", c.m_query},
           {"target_m_query", c.target_m_query},
           {"epochs", c.epochs},
           {"episodes_per_epoch", c.episodes_per_epoch},
           {"lr", c.lr},
           {"seed", c.seed},
           {"lfr", {{"gamma", gamma}, {"mode", to_string(c.lfr.mode)}, {"pairing", to_string(c.lfr.pairing)}}},
           {"loss_terms", {{"source", c.loss_terms.source}, {"target", c.loss_terms.target}, {"pseudo", c.loss_terms.pseudo}}},
           {"reduction", c.reduction == Reduction::Sum ? "sum" : "mean"}};
}

void from_json(const json& j, TrainConfig& c) {
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("n_way", c.n_way);
    get("k_shot", c.k_shot);
    get("m_query", c.m_query);
    get("target_m_query", c.target_m_query);
    get("epochs", c.epochs);
    get("episodes_per_epoch", c.episodes_per_epoch);
    get("lr", c.lr);
    get("seed", c.seed);
    if (j.contains("lfr")) {
      const json& l = j.at("lfr");
      if (l.contains("gamma")) {
        const json& g = l.at("gamma");
        if (g.contains("fixed")) {
          c.lfr.gamma = GammaDist::fixed(g.at("fixed").get<Real>());
        } else if (g.contains("uniform")) {
          const auto r = g.at("uniform").get<std::array<Real, 2>>();
          c.lfr.gamma = GammaDist::uniform(r[0], r[1]);
        } else {
          throw Error("train config: lfr.gamma needs 'fixed' or 'uniform'");
        }
      }
      if (l.contains("mode")) c.lfr.mode = parse_replace_mode(l.at("mode").get<std::string>());
      if (l.contains("pairing")) c.lfr.pairing = parse_pairing(l.at("pairing").get<std::string>());
    }
    if (j.contains("loss_terms")) {
      const json& t = j.at("loss_terms");
      if (t.contains("source")) c.loss_terms.source = t.at("source").get<bool>();
      if (t.contains("target")) c.loss_terms.target = t.at("target").get<bool>();
      if (t.contains("pseudo")) c.loss_terms.pseudo = t.at("pseudo").get<bool>();
    }
    if (j.contains("reduction")) {
      const auto r = j.at("reduction").get<std::string>();
      if (r != "sum" && r != "mean") throw Error("train config: reduction must be sum or mean");
      c.reduction = r == "sum" ? Reduction::Sum : Reduction::Mean;
    }
  } catch (const json::exception& e) {
    throw Error(std::string("train config: ") + e.what());
  }
}

void to_json(json& j, const EvalConfig& c) {
  j = json{{"n_way", c.n_way}, {"k_shot", c.k_shot}, {"m_query", c.m_query}, {"n_tasks", c.n_tasks}, {"seed", c.seed}};
}

void from_json(const json& j, EvalConfig& c) {
  try {
    if (j.contains("n_way")) c.n_way = j.at("n_way").get<std::size_t>();
    if (j.contains("k_shot")) c.k_shot = j.at("k_shot").get<std::size_t>();
    if (j.contains("m_query")) c.m_query = j.at("m_query").get<std::size_t>();
    if (j.contains("n_tasks")) c.n_tasks = j.at("n_tasks").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(std::string("eval config: ") + e.what());
  }
}

// ---------------------------------------------------------------- training

Tensor few_shot_loss(const Episode& episode, FewShotModel& model, Reduction reduction) {
  const std::size_t ns = episode.support.dim(0);
  Tensor emb = model.embed(concat({episode.support, episode.query}, 0));
  Tensor logits =
      model.head_logits(slice(emb, 0, 0, ns), episode.support_labels, slice(emb, 0, ns, emb.dim(0)), episode.n_way);
  return cross_entropy(logits, episode.query_labels, reduction);
}

Trainer::Trainer(FewShotModel& model, TrainConfig cfg)
    : model_(model),
      cfg_(std::move(cfg)),
      opt_(model.parameters(), AdamConfig{cfg_.lr}),
      lfr_rng_(derive_rng(cfg_.seed, Stream::Lfr)) {}

StepMetrics Trainer::train_step(const Episode& src, const Episode& tar) {
  if (!cfg_.loss_terms.any()) throw Error("train_step: every loss term is disabled, nothing to optimize");
  model_.set_training(true);
  StepMetrics m;
  Tape tape;
  TapeScope scope(tape);
  Tensor total;
  auto accumulate = [&](const Tensor& term) { total = total.defined() ? add(total, term) : term; };
  if (cfg_.loss_terms.pseudo) {
    Episode pseudo = apply_lfr(src, tar, cfg_.lfr, lfr_rng_);
    Tensor l = few_shot_loss(pseudo, model_, cfg_.reduction);
    m.loss_pseudo = l.item();
    accumulate(l);
  }
  if (cfg_.loss_terms.target) {
    Tensor l = few_shot_loss(tar, model_, cfg_.reduction);
    m.loss_tar = l.item();
    accumulate(l);
  }
  if (cfg_.loss_terms.source) {
    Tensor l = few_shot_loss(src, model_, cfg_.reduction);
    m.loss_src = l.item();
    accumulate(l);
  }
  m.total = total.item();
  opt_.zero_grad();
  total.backward();
  opt_.step();
  return m;
}

std::vector<StepMetrics> Trainer::fit(const Dataset& data, const std::function<void(const StepMetrics&)>& on_step) {
  cfg_.validate();
  const DatasetSplit& source = data.by_role(SplitRole::SourceTrain);
  const DatasetSplit& target = data.by_role(SplitRole::TargetTrain);
  Rng src_rng = derive_rng(cfg_.seed, Stream::SourceEpisodes);
  Rng tar_rng = derive_rng(cfg_.seed, Stream::TargetEpisodes);
  std::vector<StepMetrics> log;
  for (std::size_t e = 0; e < cfg_.epochs; ++e)
    for (std::size_t i = 0; i < cfg_.episodes_per_epoch; ++i) {
      Episode src = sample_episode(source, cfg_.n_way, cfg_.k_shot, cfg_.m_query, src_rng, DomainTag::Source);
      Episode tar = sample_episode(target, cfg_.n_way, cfg_.k_shot, cfg_.target_m_query, tar_rng, DomainTag::Target);
      StepMetrics m = train_step(src, tar);
      m.epoch = e;
      m.episode = i;
      if (on_step) on_step(m);
      log.push_back(m);
    }
  model_.set_training(false);
  return log;
}

// ---------------------------------------------------------------- evaluation

namespace {

std::vector<std::size_t> split_refs(const DatasetSplit& split) {
  std::vector<std::size_t> refs;
  for (const auto& c : split.classes) refs.insert(refs.end(), c.refs.begin(), c.refs.end());
  return refs;
}

Tensor embed_refs(FewShotModel& model, const DatasetSplit& split, const std::vector<std::size_t>& refs,
                  const ModelPredictor::Transform& transform, std::size_t batch) {
  const bool was_training = model.training();
  model.set_training(false);
  NoGradScope no_grad;
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < refs.size(); b += batch) {
    std::vector<Tensor> imgs;
    for (std::size_t i = b; i < std::min(refs.size(), b + batch); ++i) {
      Tensor img = split.image(refs[i]);
      imgs.push_back(transform ? transform(img) : img);
    }
    parts.push_back(model.embed(stack_images(imgs)));
  }
  model.set_training(was_training);
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows) {
  const std::size_t d = table.dim(1);
  Tensor out = Tensor::zeros({rows.size(), d});
  auto src = table.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d, dst.begin() + static_cast<std::ptrdiff_t>(i * d));
  return out;
}

}  // namespace

ModelPredictor::ModelPredictor(FewShotModel& model, Transform transform, std::size_t batch)
    : model_(model), transform_(std::move(transform)), batch_(batch) {}

void ModelPredictor::prepare(const DatasetSplit& split) {
  const auto refs = split_refs(split);
  std::size_t max_ref = 0;
  for (std::size_t r : refs) max_ref = std::max(max_ref, r);
  row_of_ref_.assign(max_ref + 1, static_cast<std::size_t>(-1));
  for (std::size_t i = 0; i < refs.size(); ++i) row_of_ref_[refs[i]] = i;
  embeddings_ = embed_refs(model_, split, refs, transform_, batch_);
}

std::vector<int> ModelPredictor::predict(const EpisodeIndex& task, Rng&) {
  if (!embeddings_.defined()) throw Error("ModelPredictor: prepare() was not called");
  auto rows = [&](const std::vector<std::size_t>& refs) {
    std::vector<std::size_t> out;
    for (std::size_t r : refs) out.push_back(row_of_ref_.at(r));
    return out;
  };
  NoGradScope no_grad;
  Tensor logits = model_.head_logits(gather_rows(embeddings_, rows(task.support_refs)), task.support_labels,
                                     gather_rows(embeddings_, rows(task.query_refs)), task.n_way);
  std::vector<int> pred(logits.dim(0));
  auto d = logits.data();
  for (std::size_t q = 0; q < pred.size(); ++q) {
    const auto row = d.subspan(q * task.n_way, task.n_way);
    pred[q] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return pred;
}

std::vector<int> OraclePredictor::predict(const EpisodeIndex& task, Rng&) { return task.query_labels; }

std::vector<int> RandomPredictor::predict(const EpisodeIndex& task, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(task.n_way) - 1);
  std::vector<int> out(task.query_labels.size());
  for (auto& p : out) p = pick(rng);
  return out;
}

EvalResult evaluate(const DatasetSplit& split, EpisodePredictor& predictor, const EvalConfig& cfg) {
  if (cfg.n_tasks == 0) throw Error("evaluate: n_tasks must be positive");
  predictor.prepare(split);
  EvalResult res;
  res.task_accuracy.assign(cfg.n_tasks, 0);
  parallel_for(cfg.n_tasks, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      Rng rng = derive_rng(cfg.seed, Stream::Eval, t);
      EpisodeIndex task = sample_episode_index(split, cfg.n_way, cfg.k_shot, cfg.m_query, rng);
      const auto pred = predictor.predict(task, rng);
      std::size_t hit = 0;
      for (std::size_t q = 0; q < pred.size(); ++q) hit += pred[q] == task.query_labels[q];
      res.task_accuracy[t] = static_cast<Real>(hit) / static_cast<Real>(pred.size());
    }
  });
  const Real n = static_cast<Real>(cfg.n_tasks);
  res.mean = std::accumulate(res.task_accuracy.begin(), res.task_accuracy.end(), Real(0)) / n;
  Real var = 0;
  for (Real a : res.task_accuracy) var += (a - res.mean) * (a - res.mean);
  var /= n;
  res.ci95 = Real(1.96) * std::sqrt(var) / std::sqrt(n);
  return res;
}

EvalResult evaluate(const DatasetSplit& split, FewShotModel& model, const EvalConfig& cfg) {
  ModelPredictor predictor(model);
  return evaluate(split, predictor, cfg);
}

Tensor extract_features(FewShotModel& model, const DatasetSplit& split, std::size_t max_images, std::size_t batch) {
  auto refs = split_refs(split);
  if (max_images && refs.size() > max_images) {
    // evenly spaced subsample, covering every class
    std::vector<std::size_t> sub;
    for (std::size_t i = 0; i < max_images; ++i) sub.push_back(refs[i * refs.size() / max_images]);
    refs = std::move(sub);
  }
  return embed_refs(model, split, refs, {}, batch);
}

}  // namespace freqgrl
