#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "freqgrl/tensor.hpp"

namespace freqgrl {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Binary records: u32 name length, name bytes, u32 rank, u32 dims, f64
/// payload, all little-endian. Also writes `<path>.json` listing names and
/// shapes.
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace freqgrl
