#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "freqgrl/training.hpp"
#include "json.hpp"

namespace freqgrl {

// ---------------------------------------------------------------- MMD

struct MmdReport {
  Real value = 0;      // sqrt(max(MMD^2, 0))
  Real mmd2 = 0;       // raw biased estimate
  Real bandwidth = 0;  // k(x, y) = exp(-|x - y|^2 / bandwidth)
  std::size_t n_source = 0, n_target = 0;
  std::string warning;
};

/// Biased MMD with an RBF kernel whose bandwidth is the median pairwise
/// squared distance of the pooled sample. Rows are samples.
MmdReport mmd(const Tensor& a, const Tensor& b);

nlohmann::json to_json(const MmdReport& r);

// ---------------------------------------------------------------- frequency probe

struct ProbeConfig {
  Real gamma_probe = Real(0.1);  // r = gamma_probe * min(H, W)
  EvalConfig eval;
};

struct FreqProbeReport {
  Real gamma_probe = 0;
  Real radius = 0;
  Real acc_original = 0, acc_low = 0, acc_high = 0;
  Real low_ratio = 0, high_ratio = 0;
};

/// Builds a predictor that sees every image through `transform` (empty means
/// the untouched image).
using PredictorFactory = std::function<std::unique_ptr<EpisodePredictor>(ModelPredictor::Transform)>;

/// Evaluates the same tasks on original, low-only and high-only images.
/// Reconstructions are not clamped, so low + high equals the original.
FreqProbeReport frequency_probe(const PredictorFactory& make, const DatasetSplit& split, const ProbeConfig& cfg);
FreqProbeReport frequency_probe(FewShotModel& model, const DatasetSplit& split, const ProbeConfig& cfg);

nlohmann::json to_json(const FreqProbeReport& r);

// ---------------------------------------------------------------- experiments

struct ExperimentConfig {
  std::string name = "default";
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults.
ExperimentConfig experiment_from_json(const nlohmann::json& j);

/// Applies a JSON merge patch to the serialized config.
ExperimentConfig apply_delta(const ExperimentConfig& base, const nlohmann::json& delta);

struct GridRow {
  std::string name;
  nlohmann::json delta;
};

/// Reads [{"name": ..., "delta": {...}}, ...] or {"rows": [...]}.
std::vector<GridRow> parse_grid(const nlohmann::json& j);

struct AnalysisOptions {
  bool mmd = false;
  std::size_t mmd_max_images = 500;  // per domain
  std::optional<ProbeConfig> probe;  // run on the source-train split
};

struct ExperimentResult {
  std::string name;
  std::uint64_t seed = 0;
  EvalResult eval;
  std::vector<StepMetrics> train_log;
  std::optional<MmdReport> mmd;      // source-train vs target-test features
  std::optional<FreqProbeReport> probe;
  std::shared_ptr<FewShotModel> model;
};

/// Builds the model from (config, seed), trains and evaluates on the
/// target-test split. The seed replaces train.seed and eval.seed.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed,
                                const AnalysisOptions& analysis = {},
                                const std::function<void(const StepMetrics&)>& on_step = {});

struct AblationRow {
  std::string name;
  Real mean = 0, std = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<Real> accuracy;
};

/// Every row is trained from the same seeds, so rows are paired and do not
/// depend on their position in the grid.
std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base, const std::vector<GridRow>& grid,
                                            const std::vector<std::uint64_t>& seeds, const Dataset& data,
                                            const std::function<void(const ExperimentResult&)>& on_result = {});

/// name,mean_acc,std_acc,n_seeds,seed_accs   (seed_accs: "seed:acc;seed:acc")
std::string ablation_csv(const std::vector<AblationRow>& rows);
inline constexpr const char* kAblationCsvHeader = "name,mean_acc,std_acc,n_seeds,seed_accs";

}  // namespace freqgrl
