#include "freqgrl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "freqgrl/fft.hpp"
#include "freqgrl/frequency.hpp"
#include "freqgrl/image_io.hpp"
#include "json.hpp"

namespace freqgrl {

namespace fs = std::filesystem;
// Manifests keep the order in which splits and classes are declared.
using json = nlohmann::ordered_json;

std::string to_string(SplitRole role) {
  switch (role) {
    case SplitRole::SourceTrain: return "source-train";
    case SplitRole::TargetTrain: return "target-train";
    case SplitRole::TargetTest: return "target-test";
  }
  return "?";
}

SplitRole parse_split_role(const std::string& s) {
  if (s == "source-train") return SplitRole::SourceTrain;
  if (s == "target-train") return SplitRole::TargetTrain;
  if (s == "target-test") return SplitRole::TargetTest;
  throw Error("unknown split role '" + s + "' (expected source-train, target-train or target-test)");
}

// ---------------------------------------------------------------- store

std::size_t ImageStore::add_path(const fs::path& path) {
  std::lock_guard lock(mutex_);
  keys_.push_back(path.lexically_normal().generic_string());
  paths_.emplace_back(path);
  cache_.emplace_back();
  return keys_.size() - 1;
}

std::size_t ImageStore::add_tensor(Tensor image, std::string key) {
  std::lock_guard lock(mutex_);
  keys_.push_back(std::move(key));
  paths_.emplace_back(std::nullopt);
  cache_.push_back(std::move(image));
  return keys_.size() - 1;
}

Tensor ImageStore::get(std::size_t ref) const {
  std::lock_guard lock(mutex_);
  if (ref >= cache_.size()) throw Error("image ref " + std::to_string(ref) + " out of range");
  if (!cache_[ref].defined()) cache_[ref] = read_image(*paths_[ref], 3);
  return cache_[ref];
}

std::size_t ImageStore::decoded() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count_if(cache_.begin(), cache_.end(), [](const Tensor& t) { return t.defined(); }));
}

std::size_t DatasetSplit::num_images() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.refs.size();
  return n;
}

const DatasetSplit& Dataset::split(const std::string& name) const {
  for (const auto& s : splits)
    if (s.name == name) return s;
  throw Error("no split named '" + name + "'");
}

const DatasetSplit& Dataset::by_role(SplitRole role) const {
  for (const auto& s : splits)
    if (s.role == role) return s;
  throw Error("dataset has no " + to_string(role) + " split");
}

bool Dataset::has_role(SplitRole role) const {
  return std::any_of(splits.begin(), splits.end(), [role](const DatasetSplit& s) { return s.role == role; });
}

// ---------------------------------------------------------------- manifest

Dataset load_manifest(const fs::path& path, const ManifestOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("manifest not found: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("malformed manifest " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw Error("malformed manifest " + path.string() + ": top level must be an object");

  const fs::path base = path.parent_path();
  auto store = std::make_shared<ImageStore>();
  std::map<std::string, std::string> owner;  // image key -> split name
  Dataset ds;
  for (const auto& [name, body] : doc.items()) {
    if (name == "version") continue;
    if (!body.is_object() || !body.contains("role") || !body.contains("classes") || !body["role"].is_string() ||
        !body["classes"].is_object()) {
      throw Error("malformed manifest: split '" + name + "' needs a string 'role' and an object 'classes'");
    }
    DatasetSplit split;
    split.name = name;
    split.role = parse_split_role(body["role"].get<std::string>());
    split.store = store;
    for (const auto& [cid, list] : body["classes"].items()) {
      if (!list.is_array()) throw Error("malformed manifest: class '" + cid + "' in split '" + name + "' is not a list");
      if (list.empty()) throw Error("class '" + cid + "' in split '" + name + "' has no images");
      ClassImages cls{cid, {}};
      for (const auto& entry : list) {
        if (!entry.is_string()) throw Error("malformed manifest: non-string image path in class '" + cid + "'");
        const fs::path rel(entry.get<std::string>());
        const fs::path full = rel.is_absolute() ? rel : base / rel;
        const std::size_t ref = store->add_path(full);
        const std::string& key = store->key(ref);
        auto [it, fresh] = owner.emplace(key, name);
        if (!fresh) {
          throw Error("image '" + entry.get<std::string>() + "' appears in split '" + it->second + "' and split '" +
                      name + "'");
        }
        cls.refs.push_back(ref);
      }
      split.classes.push_back(std::move(cls));
    }
    if (split.classes.empty()) throw Error("split '" + name + "' has no classes");
    if (split.role == SplitRole::TargetTrain) {
      const std::size_t first = split.classes.front().refs.size();
      for (const auto& c : split.classes) {
        const std::size_t want = options.target_train_images_per_class.value_or(first);
        if (c.refs.size() != want) {
          throw Error("target-train class '" + c.id + "' has " + std::to_string(c.refs.size()) + " images, expected " +
                      std::to_string(want));
        }
      }
    }
    ds.splits.push_back(std::move(split));
  }
  if (ds.splits.empty()) throw Error("manifest " + path.string() + " declares no splits");
  return ds;
}

void save_manifest(const fs::path& path, const Dataset& dataset) {
  const fs::path base = path.parent_path();
  json doc = json::object();
  doc["version"] = 1;
  for (const auto& s : dataset.splits) {
    json classes = json::object();
    for (const auto& c : s.classes) {
      json list = json::array();
      for (std::size_t ref : c.refs) {
        const auto& p = s.store->path(ref);
        if (!p) throw Error("save_manifest: image '" + s.store->key(ref) + "' has no file");
        list.push_back(fs::relative(*p, base.empty() ? fs::current_path() : base).generic_string());
      }
      classes[c.id] = list;
    }
    doc[s.name] = {{"role", to_string(s.role)}, {"classes", classes}};
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------- synthetic

namespace {

using Bin = std::pair<std::size_t, std::size_t>;

// Representative of a conjugate pair; self-conjugate bins are skipped.
bool is_representative(std::size_t u, std::size_t v, std::size_t n) {
  const std::size_t mu = (n - u) % n, mv = (n - v) % n;
  if (mu == u && mv == v) return false;
  return std::make_pair(u, v) < std::make_pair(mu, mv);
}

// Adds a real cosine of pixel amplitude |a| and phase arg(a) at bin (u,v).
void add_component(std::vector<Complex>& plane, std::size_t n, Bin bin, Complex a) {
  const Real half = static_cast<Real>(n * n) / 2;
  const auto [u, v] = bin;
  plane[u * n + v] += a * half;
  plane[((n - u) % n) * n + (n - v) % n] += std::conj(a) * half;
}

Complex polar(Real amp, Real phase) { return std::polar(amp, phase); }

}  // namespace

SynthGenerator::SynthGenerator(SynthConfig cfg) : cfg_(cfg) {
  const std::size_t n = cfg_.image_size;
  if (n < 4) throw Error("synthetic: image_size must be at least 4");
  if (!(cfg_.style_max_radius <= cfg_.signature_min_radius)) {
    throw Error("synthetic: style bins (radius < " + std::to_string(cfg_.style_max_radius) +
                ") overlap signature bins (radius >= " + std::to_string(cfg_.signature_min_radius) + ")");
  }
  if (cfg_.target_train_images == 0 || cfg_.source_images == 0 || cfg_.target_test_images == 0) {
    throw Error("synthetic: every split needs at least one image per class");
  }
  Rng rng = derive_rng(cfg_.seed, Stream::Data);
  std::vector<Bin> high, low;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      if (!is_representative(u, v, n)) continue;
      const Real d = normalized_radius(u, v, n, n);
      if (d >= cfg_.signature_min_radius) high.emplace_back(u, v);
      if (d > 0 && d < cfg_.style_max_radius) low.emplace_back(u, v);
    }
  std::shuffle(high.begin(), high.end(), rng);
  std::shuffle(low.begin(), low.end(), rng);
  if (high.size() < cfg_.bank_size) throw Error("synthetic: too few high-frequency bins for the signature bank");
  if (low.size() < cfg_.style_bins) throw Error("synthetic: too few low-frequency bins for the style");
  bank_.assign(high.begin(), high.begin() + static_cast<std::ptrdiff_t>(cfg_.bank_size));
  style_.assign(low.begin(), low.begin() + static_cast<std::ptrdiff_t>(cfg_.style_bins));

  std::uniform_real_distribution<Real> unit(0, 1), angle(0, 2 * std::numbers::pi_v<Real>);
  auto channel_triplet = [&](Real lo, Real hi) {
    return std::array<Real, 3>{lo + (hi - lo) * unit(rng), lo + (hi - lo) * unit(rng), lo + (hi - lo) * unit(rng)};
  };
  auto phases = [&] { return std::array<Real, 3>{angle(rng), angle(rng), angle(rng)}; };

  std::set<std::vector<std::size_t>> used;
  std::vector<std::size_t> idx(cfg_.bank_size);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t c = 0; c < cfg_.total_classes(); ++c) {
    ClassSpec spec;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw Error("synthetic: bank too small for distinct class signatures");
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<std::size_t> pick(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cfg_.bins_per_class));
      std::sort(pick.begin(), pick.end());
      if (used.insert(pick).second) {
        spec.bank_index = pick;
        break;
      }
    }
    for (std::size_t b = 0; b < cfg_.bins_per_class; ++b) {
      spec.amplitude.push_back(channel_triplet(Real(0.6) * cfg_.signature_amplitude, cfg_.signature_amplitude));
      spec.phase.push_back(phases());
    }
    spec.color_offset = channel_triplet(-cfg_.source_class_color, cfg_.source_class_color);
    for (std::size_t b = 0; b < cfg_.style_bins; ++b) {
      spec.style_amp.push_back(channel_triplet(0, cfg_.style_amplitude));
      spec.style_phase.push_back(phases());
    }
    classes_.push_back(std::move(spec));
  }
  source_.base_color = {Real(0.55), Real(0.5), Real(0.42)};
  target_.base_color = {Real(0.42), Real(0.5), Real(0.58)};
  for (std::size_t b = 0; b < cfg_.style_bins; ++b) {
    target_.style_amp.push_back(channel_triplet(0, cfg_.style_amplitude));
    target_.style_phase.push_back(phases());
  }
}

std::vector<Bin> SynthGenerator::class_bins(std::size_t class_id) const {
  if (class_id >= classes_.size()) throw Error("synthetic: class id out of range");
  std::vector<Bin> out;
  for (std::size_t i : classes_[class_id].bank_index) out.push_back(bank_[i]);
  return out;
}

Tensor SynthGenerator::render(Domain domain, std::size_t class_id, std::size_t instance) const {
  if (class_id >= classes_.size()) throw Error("synthetic: class id out of range");
  const std::size_t n = cfg_.image_size, hw = n * n;
  const ClassSpec& cls = classes_[class_id];
  const bool source = domain == Domain::Source;
  const DomainSpec& dom = source ? source_ : target_;
  Rng rng = derive_rng(cfg_.seed, Stream::Data,
                       1 + ((static_cast<std::uint64_t>(class_id) * 2 + (source ? 0 : 1)) << 32) + instance);
  std::normal_distribution<Real> gauss(0, 1);

  Tensor out = Tensor::zeros({3, n, n});
  std::vector<Complex> plane(hw);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::fill(plane.begin(), plane.end(), Complex(0, 0));
    // Domain style: DC colour and low bins. Source style depends on the class.
    Real color = dom.base_color[ch] + (source ? cls.color_offset[ch] : 0);
    color += cfg_.style_noise_sigma * gauss(rng);
    plane[0] += color * static_cast<Real>(hw);
    for (std::size_t b = 0; b < style_.size(); ++b) {
      const Real amp = source ? cls.style_amp[b][ch] : dom.style_amp[b][ch];
      const Real ph = source ? cls.style_phase[b][ch] : dom.style_phase[b][ch];
      const Complex jitter(cfg_.style_noise_sigma * gauss(rng), cfg_.style_noise_sigma * gauss(rng));
      add_component(plane, n, style_[b], polar(amp, ph) + jitter * Real(std::numbers::sqrt2 / 2));
    }
    // Class signature, shared by both domains.
    for (std::size_t b = 0; b < cls.bank_index.size(); ++b) {
      add_component(plane, n, bank_[cls.bank_index[b]], polar(cls.amplitude[b][ch], cls.phase[b][ch]));
    }
    // White pixel noise, i.e. Hermitian Gaussian noise on every bin.
    if (cfg_.noise_sigma > 0) {
      std::vector<Complex> noise(hw);
      for (auto& z : noise) z = Complex(cfg_.noise_sigma * gauss(rng), 0);
      fft2d(noise, n, n, false);
      for (std::size_t i = 0; i < hw; ++i) plane[i] += noise[i];
    }
    fft2d(plane, n, n, true);
    auto d = out.mutable_data();
    for (std::size_t i = 0; i < hw; ++i) d[ch * hw + i] = std::clamp(plane[i].real() / static_cast<Real>(hw), Real(0), Real(1));
  }
  return out;
}

template <typename Fn>
Dataset SynthGenerator::build(Fn&& emit) const {
  auto store = std::make_shared<ImageStore>();
  struct Plan {
    const char* name;
    SplitRole role;
    Domain domain;
    std::size_t first_class, n_classes, n_images, first_instance;
  };
  const std::size_t s = cfg_.source_classes, tt = cfg_.target_train_classes;
  const Plan plans[] = {
      {"source_train", SplitRole::SourceTrain, Domain::Source, 0, s, cfg_.source_images, 0},
      {"target_train", SplitRole::TargetTrain, Domain::Target, s, tt, cfg_.target_train_images, 0},
      {"target_test", SplitRole::TargetTest, Domain::Target, s + tt, cfg_.target_test_classes, cfg_.target_test_images,
       0},
  };
  Dataset ds;
  for (const Plan& p : plans) {
    DatasetSplit split{p.name, p.role, {}, store};
    for (std::size_t c = p.first_class; c < p.first_class + p.n_classes; ++c) {
      ClassImages cls{"c" + std::to_string(c), {}};
      for (std::size_t i = 0; i < p.n_images; ++i) {
        Tensor img = quantize8(render(p.domain, c, p.first_instance + i));
        cls.refs.push_back(emit(*store, p.name, cls.id, i, std::move(img)));
      }
      split.classes.push_back(std::move(cls));
    }
    ds.splits.push_back(std::move(split));
  }
  return ds;
}

Dataset SynthGenerator::generate() const {
  return build([](ImageStore& store, const char* split, const std::string& cls, std::size_t i, Tensor img) {
    return store.add_tensor(std::move(img), std::string(split) + "/" + cls + "/" + std::to_string(i));
  });
}

Dataset SynthGenerator::write(const fs::path& dir) const {
  fs::create_directories(dir);
  Dataset ds = build([&](ImageStore& store, const char* split, const std::string& cls, std::size_t i, Tensor img) {
    const fs::path rel = fs::path(split) / cls / (std::to_string(i) + ".png");
    fs::create_directories(dir / rel.parent_path());
    write_png(dir / rel, img);
    return store.add_path(dir / rel);
  });
  save_manifest(dir / "manifest.json", ds);
  return load_manifest(dir / "manifest.json");
}

}  // namespace freqgrl
