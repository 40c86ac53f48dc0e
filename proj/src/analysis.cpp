#include "freqgrl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "freqgrl/frequency.hpp"

namespace freqgrl {

using nlohmann::json;

// ---------------------------------------------------------------- MMD

MmdReport mmd(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw Error("mmd: features must be [n, D]");
  if (a.dim(1) != b.dim(1)) throw Error("mmd: feature dimensions differ");
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1), total = n + m;
  if (n < 2 || m < 2) throw Error("mmd: each sample needs at least two rows");

  std::vector<double> pts(total * d);
  {
    auto da = a.data();
    auto db = b.data();
    std::copy(da.begin(), da.end(), pts.begin());
    std::copy(db.begin(), db.end(), pts.begin() + static_cast<std::ptrdiff_t>(n * d));
  }
  // pooled squared distances, upper triangle
  std::vector<double> dist(total * total, 0.0);
  parallel_for(total, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = i + 1; j < total; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) {
          const double t = pts[i * d + k] - pts[j * d + k];
          s += t * t;
        }
        dist[i * total + j] = dist[j * total + i] = s;
      }
  });

  MmdReport r;
  r.n_source = n;
  r.n_target = m;
  std::vector<double> pairs;
  pairs.reserve(total * (total - 1) / 2);
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = i + 1; j < total; ++j) pairs.push_back(dist[i * total + j]);
  auto mid = pairs.begin() + static_cast<std::ptrdiff_t>(pairs.size() / 2);
  std::nth_element(pairs.begin(), mid, pairs.end());
  double bw = *mid;
  if (pairs.size() % 2 == 0) bw = 0.5 * (bw + *std::max_element(pairs.begin(), mid));
  if (!(bw > 0)) {
    double sum = 0;
    std::size_t cnt = 0;
    for (double p : pairs)
      if (p > 0) sum += p, ++cnt;
    if (cnt == 0) {
      r.warning = "degenerate sample: all points identical";
      return r;
    }
    bw = sum / static_cast<double>(cnt);
    r.warning = "median pairwise distance is zero; bandwidth uses the mean nonzero distance";
  }
  r.bandwidth = static_cast<Real>(bw);

  auto block = [&](std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    double s = 0;
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t j = c0; j < c1; ++j) s += std::exp(-dist[i * total + j] / bw);
    return s / static_cast<double>((r1 - r0) * (c1 - c0));
  };
  const double m2 = block(0, n, 0, n) + block(n, total, n, total) - 2 * block(0, n, n, total);
  r.mmd2 = static_cast<Real>(m2);
  r.value = static_cast<Real>(std::sqrt(std::max(m2, 0.0)));
  return r;
}

json to_json(const MmdReport& r) {
  json j{{"value", r.value},
         {"mmd2", r.mmd2},
         {"kernel", {{"type", "rbf"}, {"bandwidth", r.bandwidth}}},
         {"n_source", r.n_source},
         {"n_target", r.n_target}};
  if (!r.warning.empty()) j["warning"] = r.warning;
  return j;
}

// ---------------------------------------------------------------- probe

FreqProbeReport frequency_probe(const PredictorFactory& make, const DatasetSplit& split, const ProbeConfig& cfg) {
  if (!(cfg.gamma_probe >= 0)) throw Error("frequency_probe: gamma_probe must be non-negative");
  const Tensor first = split.image(split.classes.at(0).refs.at(0));
  const std::size_t h = first.dim(first.rank() - 2), w = first.dim(first.rank() - 1);
  FreqProbeReport r;
  r.gamma_probe = cfg.gamma_probe;
  r.radius = cfg.gamma_probe * static_cast<Real>(std::min(h, w));
  const Real radius = r.radius;

  auto run = [&](ModelPredictor::Transform t) {
    auto predictor = make(std::move(t));
    return evaluate(split, *predictor, cfg.eval).mean;
  };
  r.acc_original = run({});
  if (!(r.acc_original > 0)) throw Error("frequency_probe: accuracy on original tasks is zero");
  r.acc_low = run([radius](const Tensor& x) { return split_by_radius(x, radius).first; });
  r.acc_high = run([radius](const Tensor& x) { return split_by_radius(x, radius).second; });
  r.low_ratio = r.acc_low / r.acc_original;
  r.high_ratio = r.acc_high / r.acc_original;
  return r;
}

FreqProbeReport frequency_probe(FewShotModel& model, const DatasetSplit& split, const ProbeConfig& cfg) {
  return frequency_probe(
      [&model](ModelPredictor::Transform t) { return std::make_unique<ModelPredictor>(model, std::move(t)); }, split,
      cfg);
}

json to_json(const FreqProbeReport& r) {
  return json{{"gamma_probe", r.gamma_probe}, {"radius", r.radius},     {"acc_original", r.acc_original},
              {"acc_low", r.acc_low},         {"acc_high", r.acc_high}, {"low_ratio", r.low_ratio},
              {"high_ratio", r.high_ratio}};
}

// ---------------------------------------------------------------- experiments

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["model"] = c.model;
  j["train"] = c.train;
  j["eval"] = c.eval;
  return j;
}

ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) throw Error("experiment config: expected a JSON object");
  ExperimentConfig c;
  try {
    if (j.contains("name")) c.name = j.at("name").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(std::string("experiment config: name: ") + e.what());
  }
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("eval")) from_json(j.at("eval"), c.eval);
  for (const auto& [key, _] : j.items())
    if (key != "name" && key != "model" && key != "train" && key != "eval")
      throw Error("experiment config: unknown key '" + key + "'");
  return c;
}

ExperimentConfig apply_delta(const ExperimentConfig& base, const json& delta) {
  json j = to_json(base);
  j.merge_patch(delta);
  return experiment_from_json(j);
}

std::vector<GridRow> parse_grid(const json& j) {
  const json& rows = j.is_object() && j.contains("rows") ? j.at("rows") : j;
  if (!rows.is_array()) throw Error("grid: expected an array of rows");
  std::vector<GridRow> out;
  for (const auto& r : rows) {
    if (!r.is_object() || !r.contains("name") || !r.at("name").is_string())
      throw Error("grid: every row needs a string 'name'");
    GridRow g{r.at("name").get<std::string>(), r.value("delta", json::object())};
    if (g.name.empty() || g.name.find_first_of(",;\n\r\"") != std::string::npos)
      throw Error("grid: row name '" + g.name + "' must be nonempty and free of , ; \" and newlines");
    for (const auto& prev : out)
      if (prev.name == g.name) throw Error("grid: duplicate row name '" + g.name + "'");
    if (!g.delta.is_object()) throw Error("grid: row '" + g.name + "' has a non-object delta");
    out.push_back(std::move(g));
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed,
                                const AnalysisOptions& analysis, const std::function<void(const StepMetrics&)>& on_step) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  EvalConfig ec = cfg.eval;
  ec.seed = seed;
  ModelConfig mc = cfg.model;
  mc.n_way = tc.n_way;

  ExperimentResult res;
  res.name = cfg.name;
  res.seed = seed;
  res.model = std::make_shared<FewShotModel>(mc, seed);
  Trainer trainer(*res.model, tc);
  res.train_log = trainer.fit(data, on_step);
  res.model->set_training(false);
  res.eval = evaluate(data.by_role(SplitRole::TargetTest), *res.model, ec);
  if (analysis.mmd) {
    Tensor fs = extract_features(*res.model, data.by_role(SplitRole::SourceTrain), analysis.mmd_max_images);
    Tensor ft = extract_features(*res.model, data.by_role(SplitRole::TargetTest), analysis.mmd_max_images);
    res.mmd = mmd(fs, ft);
  }
  if (analysis.probe) {
    ProbeConfig pc = *analysis.probe;
    pc.eval.seed = seed;
    res.probe = frequency_probe(*res.model, data.by_role(SplitRole::SourceTrain), pc);
  }
  return res;
}

std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base, const std::vector<GridRow>& grid,
                                            const std::vector<std::uint64_t>& seeds, const Dataset& data,
                                            const std::function<void(const ExperimentResult&)>& on_result) {
  if (!grid.empty() && seeds.empty()) throw Error("ablation: no seeds given");
  std::vector<ExperimentConfig> cfgs;
  for (const auto& row : grid) {
    ExperimentConfig c = apply_delta(base, row.delta);
    c.name = row.name;
    c.train.validate();
    c.model.backbone.validate();
    cfgs.push_back(std::move(c));
  }
  std::vector<AblationRow> rows;
  for (const auto& c : cfgs) {
    AblationRow row;
    row.name = c.name;
    for (std::uint64_t s : seeds) {
      ExperimentResult r = run_experiment(c, data, s);
      row.seeds.push_back(s);
      row.accuracy.push_back(r.eval.mean);
      if (on_result) on_result(r);
    }
    const Real n = static_cast<Real>(row.accuracy.size());
    for (Real a : row.accuracy) row.mean += a / n;
    for (Real a : row.accuracy) row.std += (a - row.mean) * (a - row.mean);
    row.std = n > 1 ? std::sqrt(row.std / (n - 1)) : Real(0);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << kAblationCsvHeader << "\n" << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.name << "," << r.mean << "," << r.std << "," << r.accuracy.size() << ",";
    for (std::size_t i = 0; i < r.accuracy.size(); ++i) os << (i ? ";" : "") << r.seeds[i] << ":" << r.accuracy[i];
    os << "\n";
  }
  return os.str();
}

}  // namespace freqgrl
