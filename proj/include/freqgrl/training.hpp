#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "freqgrl/data.hpp"
#include "freqgrl/episode.hpp"
#include "freqgrl/lfr.hpp"
#include "freqgrl/model.hpp"
#include "freqgrl/optim.hpp"
#include "json.hpp"

namespace freqgrl {

struct LossTerms {
  bool source = true;  // original source task
  bool target = true;  // target-train task
  bool pseudo = true;  // LFR pseudo source task
  bool any() const { return source || target || pseudo; }
};

struct TrainConfig {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t m_query = 16;
  /// Target-train classes hold few images, so target tasks use fewer queries.
  std::size_t target_m_query = 4;
  std::size_t epochs = 40;
  std::size_t episodes_per_epoch = 50;
  Real lr = Real(1e-3);
  std::uint64_t seed = 0;
  LfrConfig lfr;
  LossTerms loss_terms;
  Reduction reduction = Reduction::Mean;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepMetrics {
  std::size_t epoch = 0, episode = 0;
  Real loss_src = 0, loss_tar = 0, loss_pseudo = 0, total = 0;
};

/// Cross-entropy of the model's query predictions.
Tensor few_shot_loss(const Episode& episode, FewShotModel& model, Reduction reduction);

class Trainer {
 public:
  Trainer(FewShotModel& model, TrainConfig cfg);

  /// One optimizer step on the enabled terms. Disabled terms report 0.
  StepMetrics train_step(const Episode& src, const Episode& tar);
  /// epochs x episodes_per_epoch steps, one target task per source task.
  std::vector<StepMetrics> fit(const Dataset& data, const std::function<void(const StepMetrics&)>& on_step = {});

  const TrainConfig& config() const { return cfg_; }
  Adam& optimizer() { return opt_; }

 private:
  FewShotModel& model_;
  TrainConfig cfg_;
  Adam opt_;
  Rng lfr_rng_;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalConfig {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t m_query = 16;
  std::size_t n_tasks = 1000;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct EvalResult {
  Real mean = 0;
  Real ci95 = 0;
  std::vector<Real> task_accuracy;
};

/// Predicts query labels for a sampled task. predict() may run concurrently
/// for different tasks once prepare() has returned.
class EpisodePredictor {
 public:
  virtual ~EpisodePredictor() = default;
  virtual void prepare(const DatasetSplit& split) { (void)split; }
  virtual std::vector<int> predict(const EpisodeIndex& task, Rng& rng) = 0;
};

/// Embeds every image of the split once (eval-mode BN, no tape), then runs
/// the head per task. An optional transform is applied to each image first.
class ModelPredictor : public EpisodePredictor {
 public:
  using Transform = std::function<Tensor(const Tensor&)>;
  explicit ModelPredictor(FewShotModel& model, Transform transform = {}, std::size_t batch = 64);
  void prepare(const DatasetSplit& split) override;
  std::vector<int> predict(const EpisodeIndex& task, Rng& rng) override;

 private:
  FewShotModel& model_;
  Transform transform_;
  std::size_t batch_;
  std::vector<std::size_t> row_of_ref_;
  Tensor embeddings_;
};

/// Knows the answer.
class OraclePredictor : public EpisodePredictor {
 public:
  std::vector<int> predict(const EpisodeIndex& task, Rng& rng) override;
};

/// Uniform random guesses.
class RandomPredictor : public EpisodePredictor {
 public:
  std::vector<int> predict(const EpisodeIndex& task, Rng& rng) override;
};

/// Task t is drawn from its own stream derived from (seed, t), so the result
/// does not depend on the thread count.
EvalResult evaluate(const DatasetSplit& split, EpisodePredictor& predictor, const EvalConfig& cfg);
EvalResult evaluate(const DatasetSplit& split, FewShotModel& model, const EvalConfig& cfg);

/// Embeddings of every image in the split, eval mode, in store order of the
/// split's classes. [n, D].
Tensor extract_features(FewShotModel& model, const DatasetSplit& split, std::size_t max_images = 0,
                        std::size_t batch = 64);

}  // namespace freqgrl
