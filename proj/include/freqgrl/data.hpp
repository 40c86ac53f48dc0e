#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "freqgrl/rng.hpp"
#include "freqgrl/tensor.hpp"

namespace freqgrl {

enum class SplitRole { SourceTrain, TargetTrain, TargetTest };

std::string to_string(SplitRole role);
SplitRole parse_split_role(const std::string& s);

/// Shared pool of images. Entries are either decoded lazily from a path on
/// first access or held in memory from the start.
class ImageStore {
 public:
  std::size_t add_path(const std::filesystem::path& path);
  std::size_t add_tensor(Tensor image, std::string key);

  Tensor get(std::size_t ref) const;
  const std::string& key(std::size_t ref) const { return keys_.at(ref); }
  const std::optional<std::filesystem::path>& path(std::size_t ref) const { return paths_.at(ref); }
  std::size_t size() const { return keys_.size(); }
  std::size_t decoded() const;

 private:
  std::vector<std::string> keys_;
  std::vector<std::optional<std::filesystem::path>> paths_;
  mutable std::vector<Tensor> cache_;
  mutable std::mutex mutex_;
};

struct ClassImages {
  std::string id;
  std::vector<std::size_t> refs;  // into the split's store
};

struct DatasetSplit {
  std::string name;
  SplitRole role = SplitRole::SourceTrain;
  std::vector<ClassImages> classes;
  std::shared_ptr<ImageStore> store;

  std::size_t num_images() const;
  Tensor image(std::size_t ref) const { return store->get(ref); }
};

struct Dataset {
  std::vector<DatasetSplit> splits;

  const DatasetSplit& split(const std::string& name) const;
  /// First split with the given role.
  const DatasetSplit& by_role(SplitRole role) const;
  bool has_role(SplitRole role) const;
};

struct ManifestOptions {
  /// When set, every target-train class must hold exactly this many images.
  std::optional<std::size_t> target_train_images_per_class;
};

/// Manifest JSON: {"<split>": {"role": "...", "classes": {"<id>": [paths]}}}.
/// Paths are relative to the manifest's directory. A top-level "version" key
/// is reserved. Images are not decoded here.
Dataset load_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});
/// Every referenced store entry must be path-backed.
void save_manifest(const std::filesystem::path& path, const Dataset& dataset);

// ---------------------------------------------------------------------------
// Synthetic cross-domain benchmark
// ---------------------------------------------------------------------------

enum class Domain { Source, Target };

struct SynthConfig {
  std::size_t image_size = 32;
  std::size_t source_classes = 20;
  std::size_t source_images = 60;
  std::size_t target_train_classes = 10;
  std::size_t target_train_images = 5;
  std::size_t target_test_classes = 10;
  std::size_t target_test_images = 30;

  // Class identity: a few bins drawn from a shared high-frequency bank.
  Real signature_min_radius = Real(0.5);
  std::size_t bank_size = 12;
  std::size_t bins_per_class = 3;
  Real signature_amplitude = Real(0.07);

  // Domain style: DC colour plus a few bins below style_max_radius.
  Real style_max_radius = Real(0.2);
  std::size_t style_bins = 4;
  Real style_amplitude = Real(0.08);
  /// Spread of the class-dependent colour offset in the source domain.
  Real source_class_color = Real(0.2);

  Real noise_sigma = Real(0.05);
  Real style_noise_sigma = Real(0.02);
  std::uint64_t seed = 0;

  std::size_t total_classes() const { return source_classes + target_train_classes + target_test_classes; }
};

/// Renders images as the inverse transform of style + signature + noise
/// spectra. Class ids 0..S-1 are source classes, then target-train, then
/// target-test classes.
class SynthGenerator {
 public:
  explicit SynthGenerator(SynthConfig cfg);

  const SynthConfig& config() const { return cfg_; }
  /// Clamped to [0,1] but not quantized. `instance` selects the noise draw.
  Tensor render(Domain domain, std::size_t class_id, std::size_t instance) const;

  /// Uncentered full-spectrum bins (u, v) used for class signatures and style.
  const std::vector<std::pair<std::size_t, std::size_t>>& bank() const { return bank_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& style_bins() const { return style_; }
  std::vector<std::pair<std::size_t, std::size_t>> class_bins(std::size_t class_id) const;

  /// In-memory dataset of 8-bit quantized images (identical to write()).
  Dataset generate() const;
  /// Writes PNGs plus manifest.json under `dir` and returns the loaded dataset.
  Dataset write(const std::filesystem::path& dir) const;

 private:
  struct ClassSpec {
    std::vector<std::size_t> bank_index;
    std::vector<std::array<Real, 3>> amplitude;  // per bin, per channel
    std::vector<std::array<Real, 3>> phase;
    std::array<Real, 3> color_offset{};
    std::vector<std::array<Real, 3>> style_amp;  // source class style per style bin
    std::vector<std::array<Real, 3>> style_phase;
  };
  struct DomainSpec {
    std::array<Real, 3> base_color{};
    std::vector<std::array<Real, 3>> style_amp;
    std::vector<std::array<Real, 3>> style_phase;
  };

  template <typename Fn>
  Dataset build(Fn&& emit) const;

  SynthConfig cfg_;
  std::vector<std::pair<std::size_t, std::size_t>> bank_;
  std::vector<std::pair<std::size_t, std::size_t>> style_;
  std::vector<ClassSpec> classes_;
  DomainSpec source_, target_;
};

}  // namespace freqgrl
