#include "freqgrl/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace freqgrl {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

std::uint8_t to_byte(Real v) {
  const Real c = std::clamp(v, Real(0), Real(1));
  return static_cast<std::uint8_t>(std::lround(c * 255));
}

void check_image(const Tensor& image, const char* op) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw Error(std::string(op) + ": expected [1|3, H, W] image, got " + shape_str(image.shape()));
  }
}

// Interleaved 8-bit samples with `src_c` channels into a [channels,H,W] tensor.
Tensor from_interleaved(const std::vector<std::uint8_t>& px, std::size_t h, std::size_t w, std::size_t src_c,
                        std::size_t channels) {
  if (channels != 1 && channels != 3) throw Error("image: channels must be 1 or 3");
  Tensor out = Tensor::zeros({channels, h, w});
  auto d = out.mutable_data();
  const bool color = src_c >= 3;
  for (std::size_t i = 0; i < h * w; ++i) {
    const std::uint8_t* p = &px[i * src_c];
    if (channels == 3) {
      for (std::size_t c = 0; c < 3; ++c) d[c * h * w + i] = static_cast<Real>(color ? p[c] : p[0]) / 255;
    } else {
      const Real g = color ? (Real(0.299) * p[0] + Real(0.587) * p[1] + Real(0.114) * p[2]) : Real(p[0]);
      d[i] = g / 255;
    }
  }
  return out;
}

std::vector<std::uint8_t> to_interleaved(const Tensor& image) {
  const std::size_t c = image.dim(0), hw = image.dim(1) * image.dim(2);
  std::vector<std::uint8_t> px(c * hw);
  auto d = image.data();
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t k = 0; k < c; ++k) px[i * c + k] = to_byte(d[k * hw + i]);
  return px;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

Tensor quantize8(const Tensor& image) {
  Tensor out = image.detach().clone();
  for (auto& v : out.mutable_data()) v = static_cast<Real>(to_byte(v)) / 255;
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  check_image(image, "write_png");
  const auto h = static_cast<png_uint_32>(image.dim(1)), w = static_cast<png_uint_32>(image.dim(2));
  const std::size_t c = image.dim(0);
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw Error("write_png: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("write_png: libpng init failed");
  }
  std::vector<std::uint8_t> px = to_interleaved(image);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: encoding failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 r = 0; r < h; ++r) png_write_row(png, px.data() + static_cast<std::size_t>(r) * w * c);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::filesystem::path& path, std::size_t channels) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw Error("read_png: cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw Error("read_png: not a PNG: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("read_png: libpng init failed");
  }
  std::vector<std::uint8_t> px;
  png_uint_32 w = 0, h = 0;
  std::size_t src_c = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: corrupt file " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  src_c = png_get_channels(png, info);
  px.resize(static_cast<std::size_t>(w) * h * src_c);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = px.data() + static_cast<std::size_t>(r) * w * src_c;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_interleaved(px, h, w, src_c, channels);
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  check_image(image, "write_pnm");
  const std::size_t c = image.dim(0);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_pnm: cannot open " + path.string());
  out << (c == 3 ? "P6" : "P5") << '\n' << image.dim(2) << ' ' << image.dim(1) << "\n255\n";
  const auto px = to_interleaved(image);
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw Error("write_pnm: write failed for " + path.string());
}

Tensor read_pnm(const std::filesystem::path& path, std::size_t channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_pnm: cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P6" && magic != "P5") throw Error("read_pnm: unsupported format '" + magic + "' in " + path.string());
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw Error("read_pnm: malformed header in " + path.string());
  }
  if (maxval != 255) throw Error("read_pnm: only 8-bit images are supported");
  const std::size_t src_c = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> px(w * h * src_c);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size())) throw Error("read_pnm: truncated " + path.string());
  return from_interleaved(px, h, w, src_c, channels);
}

Tensor read_image(const std::filesystem::path& path, std::size_t channels) {
  if (!std::filesystem::exists(path)) throw Error("image not found: " + path.string());
  const std::string e = lower_ext(path);
  if (e == ".png") return read_png(path, channels);
  if (e == ".ppm" || e == ".pgm" || e == ".pnm") return read_pnm(path, channels);
  throw Error("unsupported image extension '" + e + "': " + path.string());
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  const std::string e = lower_ext(path);
  if (e == ".png") return write_png(path, image);
  if (e == ".ppm" || e == ".pgm" || e == ".pnm") return write_pnm(path, image);
  throw Error("unsupported image extension '" + e + "': " + path.string());
}

Tensor grid_to_image(std::span<const Real> grid, std::size_t h, std::size_t w) {
  if (grid.size() != h * w) throw Error("grid_to_image: size mismatch");
  Tensor out = Tensor::zeros({1, h, w});
  if (grid.empty()) return out;
  const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
  const Real span = *hi - *lo;
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < grid.size(); ++i) d[i] = span > 0 ? (grid[i] - *lo) / span : 0;
  return out;
}

}  // namespace freqgrl
