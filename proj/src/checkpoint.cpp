#include "freqgrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include "json.hpp"

namespace freqgrl {

namespace {

static_assert(std::numeric_limits<double>::is_iec559, "checkpoints store IEEE-754 doubles");

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return true;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error("checkpoint: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot open " + path.string() + " for writing");
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (Real v : t.data()) put_f64(out, static_cast<double>(v));
    index.push_back({{"name", name}, {"shape", t.shape()}});
  }
  if (!out) throw Error("checkpoint: write failed for " + path.string());
  std::ofstream side(path.string() + ".json");
  side << nlohmann::json{{"format", "freqgrl-checkpoint"}, {"version", 1}, {"records", index}}.dump(2) << '\n';
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  NamedTensors out;
  std::uint32_t len = 0;
  while (get_u32(in, len)) {
    if (len > (1u << 16)) throw Error("checkpoint: implausible name length in " + path.string());
    std::string name(len, '\0');
    std::uint32_t rank = 0;
    if (!in.read(name.data(), len) || !get_u32(in, rank) || rank > 8) {
      throw Error("checkpoint: corrupt record header in " + path.string());
    }
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t v = 0;
      if (!get_u32(in, v)) throw Error("checkpoint: truncated dims for " + name);
      d = v;
    }
    std::vector<Real> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<Real>(get_f64(in));
    out.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace freqgrl
