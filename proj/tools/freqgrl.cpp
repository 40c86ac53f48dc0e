#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "freqgrl/analysis.hpp"
#include "freqgrl/frequency.hpp"
#include "freqgrl/image_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace freqgrl;

namespace {

/// Validation failure tied to a flag or config field.
struct FieldError : Error {
  FieldError(std::string f, const std::string& msg) : Error(msg), field(std::move(f)) {}
  std::string field;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FieldError("config", "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FieldError("config", path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << s;
}

/// config.json, metrics.csv, checkpoints/, analysis/
struct RunDir {
  fs::path root;
  explicit RunDir(const fs::path& r) : root(r) {
    fs::create_directories(root / "checkpoints");
    fs::create_directories(root / "analysis");
  }
  fs::path config() const { return root / "config.json"; }
  fs::path metrics() const { return root / "metrics.csv"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path analysis() const { return root / "analysis"; }
};

std::string fmt(Real v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

const DatasetSplit& pick_split(const Dataset& data, const std::string& name_or_role, const char* flag) {
  for (const auto& s : data.splits)
    if (s.name == name_or_role) return s;
  try {
    return data.by_role(parse_split_role(name_or_role));
  } catch (const Error&) {
    throw FieldError(flag, "no split named or with role '" + name_or_role + "'");
  }
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw FieldError("--seeds", "not a seed list: '" + s + "'");
    }
  }
  if (out.empty()) throw FieldError("--seeds", "empty seed list");
  return out;
}

// ---------------------------------------------------------------- experiment flags

/// Flags that override fields of an ExperimentConfig. Only flags that were
/// given on the command line are applied, on top of --config.
struct ExperimentFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t epochs = 0, episodes = 0, n_way = 0, k_shot = 0, m_query = 0, target_m_query = 0, eval_tasks = 0,
              eval_m_query = 0;
  Real lr = 0;
  std::string head, mode, pairing, hfe_input, hfe, gff, lfr, source_loss, target_loss;
  Real gamma = 0;
  std::vector<Real> gamma_range, hfe_band;
  std::size_t image_size = 0;
  std::vector<std::size_t> channels;

  CLI::Option *o_seed{}, *o_epochs{}, *o_episodes{}, *o_nway{}, *o_kshot{}, *o_mquery{}, *o_tmquery{}, *o_lr{},
      *o_head{}, *o_mode{}, *o_pairing{}, *o_hfe_input{}, *o_hfe{}, *o_gff{}, *o_lfr{}, *o_gamma{}, *o_range{},
      *o_band{}, *o_size{}, *o_channels{}, *o_src{}, *o_tar{}, *o_eval{}, *o_eval_m{};

  void add(CLI::App* app, bool with_seed = true) {
    app->add_option("--config", config, "Experiment JSON (or a previous run's config.json)");
    if (with_seed) o_seed = app->add_option("--seed", seed, "Seed for init, episodes and LFR");
    o_epochs = app->add_option("--epochs", epochs);
    o_episodes = app->add_option("--episodes", episodes, "Episodes per epoch");
    o_nway = app->add_option("--n-way", n_way);
    o_kshot = app->add_option("--k-shot", k_shot);
    o_mquery = app->add_option("--m-query", m_query, "Queries per class in source tasks");
    o_tmquery = app->add_option("--target-m-query", target_m_query, "Queries per class in target-train tasks");
    o_lr = app->add_option("--lr", lr);
    o_head = app->add_option("--head", head, "gnn | proto");
    o_lfr = app->add_option("--lfr", lfr, "on | off (pseudo source loss)");
    o_src = app->add_option("--source-loss", source_loss, "on | off");
    o_tar = app->add_option("--target-loss", target_loss, "on | off");
    o_gamma = app->add_option("--gamma", gamma, "Fixed LFR gamma");
    o_range = app->add_option("--gamma-range", gamma_range, "Uniform LFR gamma range")->expected(2);
    o_mode = app->add_option("--mode", mode, "lfr | hfr");
    o_pairing = app->add_option("--pairing", pairing, "cyclic | index-aligned | random-within-task");
    o_hfe = app->add_option("--hfe", hfe, "on | off (all blocks)");
    o_gff = app->add_option("--gff", gff, "on | off (all blocks)");
    o_band = app->add_option("--hfe-band", hfe_band, "HFE band [lo, hi) in normalized radius")->expected(2);
    o_hfe_input = app->add_option("--hfe-input", hfe_input, "freq | spatial_masked | spatial_raw");
    o_size = app->add_option("--image-size", image_size, "Backbone input size");
    o_channels = app->add_option("--channels", channels, "Block channels (4 values)")->expected(4);
    o_eval = app->add_option("--eval-tasks", eval_tasks, "Tasks for evaluation");
    o_eval_m = app->add_option("--eval-m-query", eval_m_query, "Queries per class in evaluation tasks");
    o_gamma->excludes(o_range);
  }

  static bool on_off(const std::string& v, const char* flag) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw FieldError(flag, std::string(flag) + " expects on or off, got '" + v + "'");
  }

  /// Returns the config and the seed (flag, else config.json "seed", else 0).
  std::pair<ExperimentConfig, std::uint64_t> resolve() const {
    ExperimentConfig c;
    std::uint64_t s = 0;
    if (!config.empty()) {
      json j = read_json(config);
      if (j.contains("seed") && j.at("seed").is_number_unsigned()) s = j.at("seed").get<std::uint64_t>();
      try {
        c = experiment_from_json(j.contains("experiment") ? j.at("experiment") : j);
      } catch (const Error& e) {
        throw FieldError("config", e.what());
      }
    }
    auto given = [](CLI::Option* o) { return o && o->count() > 0; };
    auto guarded = [](const char* flag, auto&& fn) {
      try {
        fn();
      } catch (const FieldError&) {
        throw;
      } catch (const Error& e) {
        throw FieldError(flag, e.what());
      }
    };
    if (given(o_seed)) s = seed;
    if (given(o_epochs)) c.train.epochs = epochs;
    if (given(o_episodes)) c.train.episodes_per_epoch = episodes;
    if (given(o_nway)) c.train.n_way = c.eval.n_way = n_way;
    if (given(o_kshot)) c.train.k_shot = c.eval.k_shot = k_shot;
    if (given(o_mquery)) c.train.m_query = m_query;
    if (given(o_tmquery)) c.train.target_m_query = target_m_query;
    if (given(o_lr)) c.train.lr = lr;
    if (given(o_head)) guarded("--head", [&] { c.model.head = parse_head(head); });
    if (given(o_lfr)) c.train.loss_terms.pseudo = on_off(lfr, "--lfr");
    if (given(o_src)) c.train.loss_terms.source = on_off(source_loss, "--source-loss");
    if (given(o_tar)) c.train.loss_terms.target = on_off(target_loss, "--target-loss");
    if (given(o_gamma)) c.train.lfr.gamma = GammaDist::fixed(gamma);
    if (given(o_range)) c.train.lfr.gamma = GammaDist::uniform(gamma_range[0], gamma_range[1]);
    if (given(o_mode)) guarded("--mode", [&] { c.train.lfr.mode = parse_replace_mode(mode); });
    if (given(o_pairing)) guarded("--pairing", [&] { c.train.lfr.pairing = parse_pairing(pairing); });
    if (given(o_hfe)) c.model.set_hfe(on_off(hfe, "--hfe"));
    if (given(o_gff)) c.model.set_gff(on_off(gff, "--gff"));
    if (given(o_band)) {
      c.model.backbone.hfe.band_lo = hfe_band[0];
      c.model.backbone.hfe.band_hi = hfe_band[1];
    }
    if (given(o_hfe_input)) guarded("--hfe-input", [&] { c.model.backbone.hfe.input = parse_hfe_input(hfe_input); });
    if (given(o_size)) c.model.backbone.input_size = image_size;
    if (given(o_channels)) std::copy(channels.begin(), channels.end(), c.model.backbone.block_channels.begin());
    if (given(o_eval)) c.eval.n_tasks = eval_tasks;
    if (given(o_eval_m)) c.eval.m_query = eval_m_query;
    c.model.n_way = c.train.n_way;
    guarded("train", [&] { c.train.validate(); });
    guarded("model", [&] {
      c.model.backbone.validate();
      c.model.backbone.hfe.validate();
    });
    if (c.eval.n_tasks == 0) throw FieldError("--eval-tasks", "eval n_tasks must be positive");
    if (c.eval.m_query == 0) throw FieldError("--eval-m-query", "eval m_query must be positive");
    return {c, s};
  }
};

/// Model, config and seed of a finished training run.
struct LoadedRun {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  std::unique_ptr<FewShotModel> model;
};

LoadedRun load_run(const fs::path& run) {
  if (!fs::exists(run / "config.json")) throw FieldError("--run", "no config.json in " + run.string());
  json j = read_json(run / "config.json");
  if (!j.contains("experiment")) throw FieldError("--run", run.string() + " is not a training run");
  LoadedRun r;
  r.cfg = experiment_from_json(j.at("experiment"));
  r.seed = j.value("seed", std::uint64_t{0});
  ModelConfig mc = r.cfg.model;
  mc.n_way = r.cfg.train.n_way;
  r.model = std::make_unique<FewShotModel>(mc, r.seed);
  r.model->load(run / "checkpoints" / "model.ckpt");
  r.model->set_training(false);
  return r;
}

Dataset load_data(const std::string& manifest, const std::optional<std::size_t>& target_train_images = {}) {
  if (manifest.empty()) throw FieldError("--manifest", "--manifest is required");
  ManifestOptions opt;
  opt.target_train_images_per_class = target_train_images;
  return load_manifest(manifest, opt);
}

json snapshot(const std::string& command, const CLI::App* sub) {
  json args = json::object();
  for (const CLI::Option* o : sub->get_options()) {
    if (o->get_name() == "--help" || o->count() == 0) continue;
    const auto res = o->results();
    args[o->get_name()] = res.size() == 1 ? json(res.front()) : json(res);
  }
  return json{{"command", command}, {"args", args}, {"threads", num_threads()}};
}

std::string metrics_header() { return "epoch,episode,loss_src,loss_tar,loss_pseudo,total\n"; }

std::string metrics_row(const StepMetrics& m) {
  return std::to_string(m.epoch) + "," + std::to_string(m.episode) + "," + fmt(m.loss_src) + "," + fmt(m.loss_tar) + "," +
         fmt(m.loss_pseudo) + "," + fmt(m.total) + "\n";
}

json eval_json(const EvalResult& r, const EvalConfig& c, const std::string& split) {
  return json{{"split", split},      {"mean", r.mean},           {"ci95", r.ci95},  {"n_tasks", c.n_tasks},
              {"n_way", c.n_way},    {"k_shot", c.k_shot},       {"m_query", c.m_query}, {"seed", c.seed}};
}

void write_image_rgb(const fs::path& path, const Tensor& img) {
  Tensor c = img;
  auto d = c.mutable_data();
  for (auto& v : d) v = std::clamp(v, Real(0), Real(1));
  write_image(path, c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"freqgrl: frequency-guided cross-domain few-shot toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker threads (1 = fully deterministic)")->check(CLI::PositiveNumber);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic cross-domain benchmark");
  SynthConfig synth;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--image-size", synth.image_size);
  gen->add_option("--source-classes", synth.source_classes);
  gen->add_option("--source-images", synth.source_images);
  gen->add_option("--target-train-classes", synth.target_train_classes);
  gen->add_option("--target-train-images", synth.target_train_images);
  gen->add_option("--target-test-classes", synth.target_test_classes);
  gen->add_option("--target-test-images", synth.target_test_images);
  gen->add_option("--signature-min-radius", synth.signature_min_radius);
  gen->add_option("--bank-size", synth.bank_size);
  gen->add_option("--bins-per-class", synth.bins_per_class);
  gen->add_option("--signature-amplitude", synth.signature_amplitude);
  gen->add_option("--style-max-radius", synth.style_max_radius);
  gen->add_option("--style-bins", synth.style_bins);
  gen->add_option("--style-amplitude", synth.style_amplitude);
  gen->add_option("--source-class-color", synth.source_class_color);
  gen->add_option("--noise-sigma", synth.noise_sigma);
  gen->add_option("--style-noise-sigma", synth.style_noise_sigma);
  gen->add_option("--seed", synth.seed);

  // augment
  auto* aug = app.add_subcommand("augment", "Write LFR/HFR pseudo source episodes with provenance");
  std::string aug_src, aug_tar, aug_src_split = "source-train", aug_tar_split = "target-train", aug_out, aug_mode = "lfr",
                               aug_pairing = "cyclic";
  Real aug_gamma = 0;
  std::vector<Real> aug_range;
  std::size_t aug_episodes = 1, aug_n = 5, aug_k = 1, aug_m = 4;
  std::uint64_t aug_seed = 0;
  aug->add_option("--src-manifest", aug_src)->required();
  aug->add_option("--tar-manifest", aug_tar)->required();
  aug->add_option("--src-split", aug_src_split, "Split name or role");
  aug->add_option("--tar-split", aug_tar_split, "Split name or role");
  auto* aug_g = aug->add_option("--gamma", aug_gamma);
  auto* aug_r = aug->add_option("--gamma-range", aug_range)->expected(2);
  aug_g->excludes(aug_r);
  aug->add_option("--mode", aug_mode, "lfr | hfr");
  aug->add_option("--pairing", aug_pairing, "cyclic | index-aligned | random-within-task");
  aug->add_option("--episodes", aug_episodes);
  aug->add_option("--n-way", aug_n);
  aug->add_option("--k-shot", aug_k);
  aug->add_option("--m-query", aug_m);
  aug->add_option("--seed", aug_seed);
  aug->add_option("--out", aug_out)->required();

  // decompose
  auto* dec = app.add_subcommand("decompose", "Low/high-frequency reconstructions of one image");
  std::string dec_image, dec_out;
  Real dec_gamma = Real(0.1);
  dec->add_option("--image", dec_image)->required();
  dec->add_option("--gamma", dec_gamma, "Radius as a fraction of min(H, W)");
  dec->add_option("--out", dec_out)->required();

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  ExperimentFlags train_flags;
  std::string train_manifest, train_out;
  train->add_option("--manifest", train_manifest)->required();
  train->add_option("--out", train_out)->required();
  train_flags.add(train);
  bool train_eval = false;
  train->add_flag("--eval", train_eval, "Evaluate on target-test after training");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a trained run");
  std::string ev_run, ev_manifest, ev_split = "target-test", ev_out;
  EvalConfig ev_cfg;
  auto* ev_seed = ev->add_option("--seed", ev_cfg.seed);
  ev->add_option("--run", ev_run, "Training run directory")->required();
  ev->add_option("--manifest", ev_manifest)->required();
  ev->add_option("--split", ev_split, "Split name or role");
  ev->add_option("--n-tasks", ev_cfg.n_tasks);
  auto* ev_n = ev->add_option("--n-way", ev_cfg.n_way);
  ev->add_option("--k-shot", ev_cfg.k_shot);
  ev->add_option("--m-query", ev_cfg.m_query);
  ev->add_option("--out", ev_out)->required();

  // probe
  auto* pr = app.add_subcommand("probe", "Accuracy on low-only / high-only reconstructions");
  std::string pr_run, pr_manifest, pr_split = "source-train", pr_out;
  ProbeConfig pr_cfg;
  auto* pr_seed = pr->add_option("--seed", pr_cfg.eval.seed);
  pr->add_option("--run", pr_run)->required();
  pr->add_option("--manifest", pr_manifest)->required();
  pr->add_option("--split", pr_split, "Split name or role");
  pr->add_option("--gamma-probe", pr_cfg.gamma_probe, "Probe radius as a fraction of min(H, W)")->required();
  pr->add_option("--n-tasks", pr_cfg.eval.n_tasks);
  pr->add_option("--k-shot", pr_cfg.eval.k_shot);
  pr->add_option("--m-query", pr_cfg.eval.m_query);
  pr->add_option("--out", pr_out)->required();

  // mmd
  auto* mm = app.add_subcommand("mmd", "MMD between final-block features of two splits");
  std::string mm_run, mm_manifest, mm_source = "source-train", mm_target = "target-test", mm_out;
  std::size_t mm_max = 500;
  mm->add_option("--run", mm_run)->required();
  mm->add_option("--manifest", mm_manifest)->required();
  mm->add_option("--source-split", mm_source);
  mm->add_option("--target-split", mm_target);
  mm->add_option("--max-images", mm_max, "Per split, evenly subsampled (0 = all)");
  mm->add_option("--out", mm_out)->required();

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and evaluate a grid of config deltas over seeds");
  ExperimentFlags ab_flags;
  std::string ab_manifest, ab_grid, ab_seeds = "0,1,2,3,4", ab_out;
  ab->add_option("--manifest", ab_manifest)->required();
  ab->add_option("--grid", ab_grid, "Grid JSON")->required();
  ab->add_option("--seeds", ab_seeds, "Comma-separated seeds");
  ab->add_option("--out", ab_out)->required();
  ab_flags.add(ab, false);

  // export-filters
  auto* ex = app.add_subcommand("export-filters", "Export GFF filter magnitude maps");
  std::string ex_run, ex_out;
  ex->add_option("--run", ex_run)->required();
  ex->add_option("--out", ex_out)->required();

  std::string command = "freqgrl";
  try {
    app.parse(argc, argv);
    set_num_threads(threads);
    CLI::App* sub = app.get_subcommands().front();
    command = sub->get_name();

    if (sub == gen) {
      RunDir rd(gen_out);
      SynthGenerator generator(synth);  // validates before writing
      Dataset data = generator.write(gen_out);
      json cfg = snapshot(command, sub);
      write_json(rd.config(), cfg);
      std::ostringstream csv;
      csv << "split,role,classes,images\n";
      for (const auto& s : data.splits)
        csv << s.name << "," << to_string(s.role) << "," << s.classes.size() << "," << s.num_images() << "\n";
      write_text(rd.metrics(), csv.str());
      std::cout << "wrote " << (fs::path(gen_out) / "manifest.json").string() << "\n";
    } else if (sub == aug) {
      LfrConfig lfr;
      if (aug_g->count()) lfr.gamma = GammaDist::fixed(aug_gamma);
      if (aug_r->count()) lfr.gamma = GammaDist::uniform(aug_range[0], aug_range[1]);
      try {
        lfr.mode = parse_replace_mode(aug_mode);
      } catch (const Error& e) {
        throw FieldError("--mode", e.what());
      }
      try {
        lfr.pairing = parse_pairing(aug_pairing);
      } catch (const Error& e) {
        throw FieldError("--pairing", e.what());
      }
      try {
        lfr.validate();
      } catch (const Error& e) {
        throw FieldError("--gamma", e.what());
      }
      if (aug_episodes == 0) throw FieldError("--episodes", "--episodes must be positive");
      RunDir rd(aug_out);
      Dataset src_data = load_data(aug_src);
      const bool same_manifest = fs::weakly_canonical(aug_src) == fs::weakly_canonical(aug_tar);
      Dataset tar_data = same_manifest ? Dataset{} : load_data(aug_tar);
      const DatasetSplit& src_split = pick_split(src_data, aug_src_split, "--src-split");
      const DatasetSplit& tar_split = pick_split(same_manifest ? src_data : tar_data, aug_tar_split, "--tar-split");
      // The same split on both sides pairs every episode with itself.
      const bool self_pair = same_manifest && &src_split == &tar_split;
      Rng src_rng = derive_rng(aug_seed, Stream::SourceEpisodes);
      Rng tar_rng = derive_rng(aug_seed, Stream::TargetEpisodes);
      Rng lfr_rng = derive_rng(aug_seed, Stream::Lfr);
      json prov = json::array();
      std::ostringstream csv;
      csv << "episode,gamma,radius,mode,pairing\n";
      for (std::size_t e = 0; e < aug_episodes; ++e) {
        Episode s = sample_episode(src_split, aug_n, aug_k, aug_m, src_rng, DomainTag::Source);
        Episode t = self_pair ? s : sample_episode(tar_split, aug_n, aug_k, aug_m, tar_rng, DomainTag::Target);
        LfrProvenance p;
        Episode out = apply_lfr(s, t, lfr, lfr_rng, &p);
        const fs::path dir = fs::path("images") / ("episode" + std::to_string(e));
        fs::create_directories(rd.root / dir);
        json files = json::array();
        auto dump = [&](const Tensor& batch, const std::vector<int>& labels, const char* tag) {
          for (std::size_t i = 0; i < batch.dim(0); ++i) {
            const fs::path f = dir / (std::string(tag) + std::to_string(i) + "_c" + std::to_string(labels[i]) + ".png");
            write_image_rgb(rd.root / f, reshape(slice(batch, 0, i, i + 1), {3, batch.dim(2), batch.dim(3)}));
            files.push_back(f.generic_string());
          }
        };
        dump(out.support, out.support_labels, "support");
        dump(out.query, out.query_labels, "query");
        auto refs = [](const DatasetSplit& sp, const Episode& ep) {
          json r = json::array();
          for (auto v : ep.support_refs) r.push_back(sp.store->key(v));
          for (auto v : ep.query_refs) r.push_back(sp.store->key(v));
          return r;
        };
        prov.push_back({{"episode", e},
                        {"gamma", p.gamma},
                        {"radius", p.radius},
                        {"mode", to_string(p.mode)},
                        {"pairing", to_string(p.pairing)},
                        {"pairs", p.pairs},
                        {"source_images", refs(src_split, s)},
                        {"target_images", refs(tar_split, t)},
                        {"outputs", files}});
        csv << e << "," << fmt(p.gamma) << "," << fmt(p.radius) << "," << to_string(p.mode) << ","
            << to_string(p.pairing) << "\n";
      }
      json cfg = snapshot(command, sub);
      cfg["lfr"] = {{"gamma", lfr.gamma.describe()}, {"mode", to_string(lfr.mode)}, {"pairing", to_string(lfr.pairing)}};
      write_json(rd.config(), cfg);
      write_json(rd.analysis() / "provenance.json", json{{"episodes", prov}});
      write_text(rd.metrics(), csv.str());
    } else if (sub == dec) {
      if (!(dec_gamma >= 0)) throw FieldError("--gamma", "--gamma must be non-negative");
      Tensor img;
      try {
        img = read_image(dec_image);
      } catch (const Error& e) {
        throw FieldError("--image", e.what());
      }
      RunDir rd(dec_out);
      const std::size_t h = img.dim(1), w = img.dim(2);
      const Real radius = dec_gamma * static_cast<Real>(std::min(h, w));
      auto [low, high] = split_by_radius(img, radius);
      write_image_rgb(rd.root / "low.png", low);
      write_image_rgb(rd.root / "high.png", high);
      const auto mag = log_magnitude_centered(img);
      write_image(rd.root / "spectrum.png", grid_to_image(mag, h, w));
      save_checkpoint(rd.checkpoints() / "decompose.ckpt", {{"original", img}, {"low", low}, {"high", high}});
      json cfg = snapshot(command, sub);
      cfg["radius"] = radius;
      write_json(rd.config(), cfg);
      std::ostringstream csv;
      csv << "component,min,max,mean\n";
      for (auto [name, t] : {std::pair<const char*, Tensor>{"original", img}, {"low", low}, {"high", high}}) {
        auto d = t.data();
        Real sum = 0;
        for (Real v : d) sum += v;
        csv << name << "," << fmt(*std::min_element(d.begin(), d.end())) << "," << fmt(*std::max_element(d.begin(), d.end()))
            << "," << fmt(sum / static_cast<Real>(d.size())) << "\n";
      }
      write_text(rd.metrics(), csv.str());
    } else if (sub == train) {
      auto [cfg, seed] = train_flags.resolve();
      Dataset data = load_data(train_manifest);
      RunDir rd(train_out);
      json snap = snapshot(command, sub);
      snap["experiment"] = to_json(cfg);
      snap["seed"] = seed;
      snap["manifest"] = fs::absolute(train_manifest).string();
      write_json(rd.config(), snap);
      std::ofstream metrics(rd.metrics());
      metrics << metrics_header();
      const auto t0 = std::chrono::steady_clock::now();
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      ModelConfig mc = cfg.model;
      mc.n_way = tc.n_way;
      FewShotModel model(mc, seed);
      Trainer trainer(model, tc);
      trainer.fit(data, [&](const StepMetrics& m) { metrics << metrics_row(m); });
      model.save(rd.checkpoints() / "model.ckpt");
      json summary{{"steps", tc.epochs * tc.episodes_per_epoch},
                   {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
      if (train_eval) {
        EvalConfig ec = cfg.eval;
        ec.seed = seed;
        EvalResult r = evaluate(data.by_role(SplitRole::TargetTest), model, ec);
        write_json(rd.analysis() / "eval.json", eval_json(r, ec, data.by_role(SplitRole::TargetTest).name));
        summary["eval_mean"] = r.mean;
      }
      write_json(rd.analysis() / "train_summary.json", summary);
    } else if (sub == ev) {
      LoadedRun run = load_run(ev_run);
      if (!ev_seed->count()) ev_cfg.seed = run.seed;
      if (!ev_n->count()) ev_cfg.n_way = run.cfg.train.n_way;
      if (ev_cfg.n_tasks == 0) throw FieldError("--n-tasks", "--n-tasks must be positive");
      Dataset data = load_data(ev_manifest);
      const DatasetSplit& split = pick_split(data, ev_split, "--split");
      RunDir rd(ev_out);
      json snap = snapshot(command, sub);
      snap["eval"] = ev_cfg;
      write_json(rd.config(), snap);
      EvalResult r = evaluate(split, *run.model, ev_cfg);
      write_json(rd.analysis() / "eval.json", eval_json(r, ev_cfg, split.name));
      std::ostringstream csv;
      csv << "task,accuracy\n";
      for (std::size_t t = 0; t < r.task_accuracy.size(); ++t) csv << t << "," << fmt(r.task_accuracy[t]) << "\n";
      write_text(rd.metrics(), csv.str());
      std::cout << std::fixed << std::setprecision(4) << "accuracy " << r.mean << " +- " << r.ci95 << "\n";
    } else if (sub == pr) {
      LoadedRun run = load_run(pr_run);
      if (!pr_seed->count()) pr_cfg.eval.seed = run.seed;
      pr_cfg.eval.n_way = run.cfg.train.n_way;
      if (!(pr_cfg.gamma_probe >= 0)) throw FieldError("--gamma-probe", "--gamma-probe must be non-negative");
      if (pr_cfg.eval.n_tasks == 0) throw FieldError("--n-tasks", "--n-tasks must be positive");
      Dataset data = load_data(pr_manifest);
      const DatasetSplit& split = pick_split(data, pr_split, "--split");
      RunDir rd(pr_out);
      json snap = snapshot(command, sub);
      snap["eval"] = pr_cfg.eval;
      write_json(rd.config(), snap);
      FreqProbeReport r = frequency_probe(*run.model, split, pr_cfg);
      json j = to_json(r);
      j["split"] = split.name;
      write_json(rd.analysis() / "probe.json", j);
      std::ostringstream csv;
      csv << "variant,accuracy,ratio\n"
          << "original," << fmt(r.acc_original) << ",1\n"
          << "low," << fmt(r.acc_low) << "," << fmt(r.low_ratio) << "\n"
          << "high," << fmt(r.acc_high) << "," << fmt(r.high_ratio) << "\n";
      write_text(rd.metrics(), csv.str());
    } else if (sub == mm) {
      LoadedRun run = load_run(mm_run);
      Dataset data = load_data(mm_manifest);
      const DatasetSplit& a = pick_split(data, mm_source, "--source-split");
      const DatasetSplit& b = pick_split(data, mm_target, "--target-split");
      RunDir rd(mm_out);
      write_json(rd.config(), snapshot(command, sub));
      MmdReport r = mmd(extract_features(*run.model, a, mm_max), extract_features(*run.model, b, mm_max));
      if (!r.warning.empty()) std::cerr << "warning: " << r.warning << "\n";
      json j = to_json(r);
      j["source_split"] = a.name;
      j["target_split"] = b.name;
      write_json(rd.analysis() / "mmd.json", j);
      write_text(rd.metrics(), "value,mmd2,bandwidth,n_source,n_target\n" + fmt(r.value) + "," + fmt(r.mmd2) + "," +
                                   fmt(r.bandwidth) + "," + std::to_string(r.n_source) + "," +
                                   std::to_string(r.n_target) + "\n");
    } else if (sub == ab) {
      auto [base, unused_seed] = ab_flags.resolve();
      (void)unused_seed;
      const auto seeds = parse_seeds(ab_seeds);
      std::vector<GridRow> grid;
      try {
        grid = parse_grid(read_json(ab_grid));
        for (const auto& row : grid) apply_delta(base, row.delta).train.validate();
      } catch (const FieldError&) {
        throw;
      } catch (const Error& e) {
        throw FieldError("--grid", e.what());
      }
      Dataset data = load_data(ab_manifest);
      RunDir rd(ab_out);
      json snap = snapshot(command, sub);
      snap["base"] = to_json(base);
      snap["grid"] = read_json(ab_grid);
      snap["seeds"] = seeds;
      write_json(rd.config(), snap);
      std::ofstream metrics(rd.metrics());
      metrics << "name,seed,accuracy,ci95\n";
      auto rows = run_ablation_suite(base, grid, seeds, data, [&](const ExperimentResult& r) {
        metrics << r.name << "," << r.seed << "," << fmt(r.eval.mean) << "," << fmt(r.eval.ci95) << "\n" << std::flush;
        std::cout << r.name << " seed " << r.seed << ": " << std::fixed << std::setprecision(4) << r.eval.mean << "\n";
      });
      write_text(rd.analysis() / "ablation.csv", ablation_csv(rows));
    } else if (sub == ex) {
      LoadedRun run = load_run(ex_run);
      RunDir rd(ex_out);
      write_json(rd.config(), snapshot(command, sub));
      std::ostringstream csv;
      csv << "block,rows,cols,file\n";
      std::size_t exported = 0;
      for (std::size_t l = 0; l < 4; ++l) {
        const GffLayer* g = run.model->gff(l);
        if (!g) continue;
        const auto map = export_filter_map(*g);
        const std::size_t h = run.cfg.model.backbone.block_size(l), w = h, rows = half_rows(h);
        const std::string stem = "gff_block" + std::to_string(l);
        std::ostringstream grid;
        grid << "row,col,value\n";
        for (std::size_t u = 0; u < rows; ++u)
          for (std::size_t v = 0; v < w; ++v) grid << u << "," << v << "," << fmt(map[u * w + v]) << "\n";
        write_text(rd.analysis() / (stem + ".csv"), grid.str());
        write_image(rd.analysis() / (stem + ".png"), grid_to_image(map, rows, w));
        csv << l << "," << rows << "," << w << "," << stem << ".csv\n";
        ++exported;
      }
      if (exported == 0) throw FieldError("--run", "model has no GFF layers");
      write_text(rd.metrics(), csv.str());
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"status", "error"}, {"command", command}, {"kind", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const FieldError& e) {
    std::cerr << json{{"status", "error"}, {"command", command}, {"kind", "config"}, {"field", e.field}, {"message", e.what()}}
                     .dump()
              << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"status", "error"}, {"command", command}, {"kind", "runtime"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
}
