#include "freqgrl/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace freqgrl {

namespace {

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<Mat>;
using CMapMat = Eigen::Map<const Mat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw Error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

template <class F, class G>
Tensor unary(const Tensor& a, F forward, G derivative) {
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = forward(x[i]);
  if (detail::should_record({&a})) {
    detail::record(out, {a}, [a, out, derivative](std::span<const Real> g) {
      auto x = a.data();
      auto y = out.data();
      std::vector<Real> dx(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = g[i] * derivative(x[i], y[i]);
      detail::accumulate_grad(a, dx);
    });
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------ elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (detail::should_record({&a, &b})) {
    detail::record(out, {a, b}, [a, b](std::span<const Real> g) {
      detail::accumulate_grad(a, g);
      detail::accumulate_grad(b, g);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (detail::should_record({&a, &b})) {
    detail::record(out, {a, b}, [a, b](std::span<const Real> g) {
      detail::accumulate_grad(a, g);
      if (b.requires_grad()) {
        std::vector<Real> neg(g.begin(), g.end());
        for (auto& v : neg) v = -v;
        detail::accumulate_grad(b, neg);
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (detail::should_record({&a, &b})) {
    detail::record(out, {a, b}, [a, b](std::span<const Real> g) {
      const std::size_t n = g.size();
      if (a.requires_grad()) {
        std::vector<Real> d(n);
        auto y = b.data();
        for (std::size_t i = 0; i < n; ++i) d[i] = g[i] * y[i];
        detail::accumulate_grad(a, d);
      }
      if (b.requires_grad()) {
        std::vector<Real> d(n);
        auto x = a.data();
        for (std::size_t i = 0; i < n; ++i) d[i] = g[i] * x[i];
        detail::accumulate_grad(b, d);
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, Real s) {
  return unary(a, [s](Real x) { return s * x; }, [s](Real, Real) { return s; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](Real x) { return x > Real(0) ? x : Real(0); },
      [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](Real x) {
        if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
        const Real e = std::exp(x);
        return e / (Real(1) + e);
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](Real x) { return std::abs(x); },
      [](Real x, Real) { return x > 0 ? Real(1) : (x < 0 ? Real(-1) : Real(0)); });
}

Tensor square(const Tensor& a) {
  return unary(a, [](Real x) { return x * x; }, [](Real x, Real) { return Real(2) * x; });
}

// ------------------------------------------------------------ reductions

Tensor sum(const Tensor& a) {
  Real s = 0;
  for (Real v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (detail::should_record({&a})) {
    detail::record(out, {a}, [a](std::span<const Real> g) {
      std::vector<Real> d(a.numel(), g[0]);
      detail::accumulate_grad(a, d);
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw Error("mean of empty tensor");
  return scale(sum(a), Real(1) / static_cast<Real>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw Error("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::from_data(std::move(shape), std::vector<Real>(a.data().begin(), a.data().end()));
  if (detail::should_record({&a})) {
    detail::record(out, {a}, [a](std::span<const Real> g) { detail::accumulate_grad(a, g); });
  }
  return out;
}

// ------------------------------------------------------------ linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw Error("matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  MapMat(out.mutable_data().data(), m, n).noalias() = CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  if (detail::should_record({&a, &b})) {
    detail::record(out, {a, b}, [a, b, m, k, n](std::span<const Real> g) {
      CMapMat gm(g.data(), m, n);
      if (a.requires_grad()) {
        std::vector<Real> d(m * k);
        MapMat(d.data(), m, k).noalias() = gm * CMapMat(b.data().data(), k, n).transpose();
        detail::accumulate_grad(a, d);
      }
      if (b.requires_grad()) {
        std::vector<Real> d(k * n);
        MapMat(d.data(), k, n).noalias() = CMapMat(a.data().data(), m, k).transpose() * gm;
        detail::accumulate_grad(b, d);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  if (detail::should_record({&a})) {
    detail::record(out, {a}, [a, m, n](std::span<const Real> g) {
      std::vector<Real> d(m * n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] = g[j * m + i];
      detail::accumulate_grad(a, d);
    });
  }
  return out;
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_row_bias");
  require_rank(bias, 1, "add_row_bias");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.dim(0) != n) throw Error("add_row_bias: bias length mismatch");
  Tensor out = Tensor::zeros({m, n});
  auto x = a.data();
  auto b = bias.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] + b[j];
  if (detail::should_record({&a, &bias})) {
    detail::record(out, {a, bias}, [a, bias, m, n](std::span<const Real> g) {
      detail::accumulate_grad(a, g);
      if (bias.requires_grad()) {
        std::vector<Real> d(n, Real(0));
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
        detail::accumulate_grad(bias, d);
      }
    });
  }
  return out;
}

Tensor mul_broadcast(const Tensor& a, const Tensor& w) {
  const auto& as = a.shape();
  const auto& ws = w.shape();
  if (ws.size() > as.size() || !std::equal(ws.begin(), ws.end(), as.end() - static_cast<std::ptrdiff_t>(ws.size()))) {
    throw Error("mul_broadcast: " + shape_str(ws) + " is not a trailing shape of " + shape_str(as));
  }
  const std::size_t t = w.numel();
  const std::size_t lead = t ? a.numel() / t : 0;
  Tensor out = Tensor::zeros(as);
  auto x = a.data();
  auto k = w.data();
  auto y = out.mutable_data();
  for (std::size_t l = 0; l < lead; ++l)
    for (std::size_t i = 0; i < t; ++i) y[l * t + i] = x[l * t + i] * k[i];
  if (detail::should_record({&a, &w})) {
    detail::record(out, {a, w}, [a, w, t, lead](std::span<const Real> g) {
      if (a.requires_grad()) {
        std::vector<Real> d(a.numel());
        auto k = w.data();
        for (std::size_t l = 0; l < lead; ++l)
          for (std::size_t i = 0; i < t; ++i) d[l * t + i] = g[l * t + i] * k[i];
        detail::accumulate_grad(a, d);
      }
      if (w.requires_grad()) {
        std::vector<Real> d(t, Real(0));
        auto x = a.data();
        for (std::size_t l = 0; l < lead; ++l)
          for (std::size_t i = 0; i < t; ++i) d[i] += g[l * t + i] * x[l * t + i];
        detail::accumulate_grad(w, d);
      }
    });
  }
  return out;
}

Tensor mul_const(const Tensor& a, std::span<const Real> pattern) {
  const std::size_t t = pattern.size();
  if (t == 0 || a.numel() % t != 0) {
    throw Error("mul_const: pattern of " + std::to_string(t) + " values does not tile " + shape_str(a.shape()));
  }
  const std::size_t lead = a.numel() / t;
  std::vector<Real> p(pattern.begin(), pattern.end());
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t l = 0; l < lead; ++l)
    for (std::size_t i = 0; i < t; ++i) y[l * t + i] = x[l * t + i] * p[i];
  if (detail::should_record({&a})) {
    detail::record(out, {a}, [a, p = std::move(p), t, lead](std::span<const Real> g) {
      std::vector<Real> d(a.numel());
      for (std::size_t l = 0; l < lead; ++l)
        for (std::size_t i = 0; i < t; ++i) d[l * t + i] = g[l * t + i] * p[i];
      detail::accumulate_grad(a, d);
    });
  }
  return out;
}

// ------------------------------------------------------------ layout

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw Error("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != shape.size()) throw Error("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != shape[d]) throw Error("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(shape));
    total += s[axis];
  }
  shape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];

  Tensor out = Tensor::zeros(shape);
  auto y = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis) * inner;
    auto x = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(x.begin() + static_cast<std::ptrdiff_t>(o * len), x.begin() + static_cast<std::ptrdiff_t>((o + 1) * len),
                y.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset));
    offset += len;
  }
  if (detail::should_record(parts)) {
    detail::record(out, parts, [parts, outer, row = total * inner](std::span<const Real> g) {
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t len = p.numel() / outer;
        if (p.requires_grad()) {
          std::vector<Real> d(p.numel());
          for (std::size_t o = 0; o < outer; ++o)
            std::copy(g.begin() + static_cast<std::ptrdiff_t>(o * row + offset),
                      g.begin() + static_cast<std::ptrdiff_t>(o * row + offset + len),
                      d.begin() + static_cast<std::ptrdiff_t>(o * len));
          detail::accumulate_grad(p, d);
        }
        offset += len;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw Error("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape os = s;
  os[axis] = end - begin;
  Tensor out = Tensor::zeros(os);
  const std::size_t len = (end - begin) * inner;
  const std::size_t stride = s[axis] * inner;
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(x.begin() + static_cast<std::ptrdiff_t>(o * stride + begin * inner),
              x.begin() + static_cast<std::ptrdiff_t>(o * stride + begin * inner + len),
              y.begin() + static_cast<std::ptrdiff_t>(o * len));
  if (detail::should_record({&a})) {
    detail::record(out, {a}, [a, outer, len, stride, begin, inner](std::span<const Real> g) {
      std::vector<Real> d(a.numel(), Real(0));
      for (std::size_t o = 0; o < outer; ++o)
        std::copy(g.begin() + static_cast<std::ptrdiff_t>(o * len), g.begin() + static_cast<std::ptrdiff_t>((o + 1) * len),
                  d.begin() + static_cast<std::ptrdiff_t>(o * stride + begin * inner));
      detail::accumulate_grad(a, d);
    });
  }
  return out;
}

// ------------------------------------------------------------ convolution

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t padding) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw Error("conv2d: expected input [B,C,H,W] and kernel [O,C,kh,kw], got " + shape_str(input) + " and " +
                shape_str(kernel));
  }
  if (input[1] != kernel[1]) {
    throw Error("conv2d: input has " + std::to_string(input[1]) + " channels but kernel expects " +
                std::to_string(kernel[1]));
  }
  if (kernel[2] % 2 == 0 || kernel[3] % 2 == 0) throw Error("conv2d: kernel sizes must be odd");
  if (stride == 0) throw Error("conv2d: stride must be positive");
  const std::size_t h = input[2] + 2 * padding, w = input[3] + 2 * padding;
  if (h < kernel[2] || w < kernel[3]) throw Error("conv2d: kernel larger than padded input");
  return {input[0], kernel[0], (h - kernel[2]) / stride + 1, (w - kernel[3]) / stride + 1};
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_c, in_h, in_w, out_c, kh, kw, out_h, out_w, stride, pad;
  std::size_t patch() const { return in_c * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

// cols[(c*kh+i)*kw+j, b*P + oh*Wo + ow]
void im2col(const ConvGeometry& g, const Real* x, Real* cols) {
  const std::size_t cols_w = g.batch * g.positions();
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        Real* row = cols + ((c * g.kh + i) * g.kw + j) * cols_w;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const Real* plane = x + (b * g.in_c + c) * g.in_h * g.in_w;
          Real* dst = row + b * g.positions();
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
              const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(g.in_h) &&
                                  iw < static_cast<std::ptrdiff_t>(g.in_w);
              dst[oh * g.out_w + ow] = inside ? plane[ih * static_cast<std::ptrdiff_t>(g.in_w) + iw] : Real(0);
            }
          }
        }
      }
}

void col2im_add(const ConvGeometry& g, const Real* cols, Real* dx) {
  const std::size_t cols_w = g.batch * g.positions();
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const Real* row = cols + ((c * g.kh + i) * g.kw + j) * cols_w;
        for (std::size_t b = 0; b < g.batch; ++b) {
          Real* plane = dx + (b * g.in_c + c) * g.in_h * g.in_w;
          const Real* src = row + b * g.positions();
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              plane[ih * static_cast<std::ptrdiff_t>(g.in_w) + iw] += src[oh * g.out_w + ow];
            }
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride, std::size_t padding) {
  const Shape out_shape = conv2d_output_shape(input.shape(), kernel.shape(), stride, padding);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != kernel.dim(0))) {
    throw Error("conv2d: bias must have shape [" + std::to_string(kernel.dim(0)) + "]");
  }
  const ConvGeometry geo{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
                         kernel.dim(3), out_shape[2],  out_shape[3], stride,        padding};
  const std::size_t patch = geo.patch(), cols_w = geo.batch * geo.positions();

  std::vector<Real> cols(patch * cols_w);
  im2col(geo, input.data().data(), cols.data());
  Mat prod = CMapMat(kernel.data().data(), geo.out_c, patch) * CMapMat(cols.data(), patch, cols_w);

  Tensor out = Tensor::zeros(out_shape);
  auto y = out.mutable_data();
  const std::size_t p = geo.positions();
  for (std::size_t b = 0; b < geo.batch; ++b)
    for (std::size_t o = 0; o < geo.out_c; ++o) {
      const Real shift = bias.defined() ? bias.data()[o] : Real(0);
      const Real* src = prod.data() + o * cols_w + b * p;
      Real* dst = y.data() + (b * geo.out_c + o) * p;
      for (std::size_t q = 0; q < p; ++q) dst[q] = src[q] + shift;
    }

  if (detail::should_record({&input, &kernel, &bias})) {
    std::vector<Tensor> inputs{input, kernel};
    if (bias.defined()) inputs.push_back(bias);
    detail::record(out, inputs, [input, kernel, bias, geo](std::span<const Real> g) {
      const std::size_t patch = geo.patch(), p = geo.positions(), cols_w = geo.batch * p;
      Mat gm(geo.out_c, cols_w);
      for (std::size_t b = 0; b < geo.batch; ++b)
        for (std::size_t o = 0; o < geo.out_c; ++o)
          std::copy(g.begin() + static_cast<std::ptrdiff_t>((b * geo.out_c + o) * p),
                    g.begin() + static_cast<std::ptrdiff_t>((b * geo.out_c + o + 1) * p), gm.data() + o * cols_w + b * p);
      if (bias.defined() && bias.requires_grad()) {
        std::vector<Real> db(geo.out_c);
        for (std::size_t o = 0; o < geo.out_c; ++o) db[o] = gm.row(static_cast<Eigen::Index>(o)).sum();
        detail::accumulate_grad(bias, db);
      }
      if (kernel.requires_grad()) {
        std::vector<Real> cols(patch * cols_w);
        im2col(geo, input.data().data(), cols.data());
        std::vector<Real> dk(geo.out_c * patch);
        MapMat(dk.data(), geo.out_c, patch).noalias() = gm * CMapMat(cols.data(), patch, cols_w).transpose();
        detail::accumulate_grad(kernel, dk);
      }
      if (input.requires_grad()) {
        Mat dcols = CMapMat(kernel.data().data(), geo.out_c, patch).transpose() * gm;
        std::vector<Real> dx(input.numel(), Real(0));
        col2im_add(geo, dcols.data(), dx.data());
        detail::accumulate_grad(input, dx);
      }
    });
  }
  return out;
}

// ------------------------------------------------------------ batch norm

BatchNormState::BatchNormState(std::size_t channels)
    : running_mean(Tensor::zeros({channels})), running_var(Tensor::full({channels}, Real(1))) {}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state, BnMode mode) {
  require_rank(input, 4, "batchnorm2d");
  const std::size_t b = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c || state.running_var.numel() != c) {
    throw Error("batchnorm2d: parameter size does not match " + std::to_string(c) + " channels");
  }
  if (mode == BnMode::Train && b < 2) throw Error("batchnorm2d: batch size 1 in train mode (undefined variance)");

  const Real n = static_cast<Real>(b * hw);
  std::vector<Real> mu(c), inv_std(c);
  auto x = input.data();
  if (mode == BnMode::Train) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      Real s = 0;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < hw; ++k) s += x[(i * c + ch) * hw + k];
      const Real m = s / n;
      Real v = 0;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < hw; ++k) {
          const Real d = x[(i * c + ch) * hw + k] - m;
          v += d * d;
        }
      v /= n;
      mu[ch] = m;
      inv_std[ch] = Real(1) / std::sqrt(v + state.eps);
      rm[ch] = (Real(1) - state.momentum) * rm[ch] + state.momentum * m;
      rv[ch] = (Real(1) - state.momentum) * rv[ch] + state.momentum * v * n / (n - Real(1));
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = rm[ch];
      inv_std[ch] = Real(1) / std::sqrt(rv[ch] + state.eps);
    }
  }

  Tensor xhat = Tensor::zeros(input.shape());
  Tensor out = Tensor::zeros(input.shape());
  {
    auto xh = xhat.mutable_data();
    auto y = out.mutable_data();
    auto gm = gamma.data();
    auto bt = beta.data();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t k = 0; k < hw; ++k) {
          const std::size_t idx = (i * c + ch) * hw + k;
          xh[idx] = (x[idx] - mu[ch]) * inv_std[ch];
          y[idx] = gm[ch] * xh[idx] + bt[ch];
        }
  }

  if (detail::should_record({&input, &gamma, &beta})) {
    const bool train = mode == BnMode::Train;
    detail::record(out, {input, gamma, beta}, [input, gamma, beta, xhat, inv_std, b, c, hw, n, train](std::span<const Real> g) {
      auto xh = xhat.data();
      std::vector<Real> dgamma(c, Real(0)), dbeta(c, Real(0));
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t k = 0; k < hw; ++k) {
            const std::size_t idx = (i * c + ch) * hw + k;
            dgamma[ch] += g[idx] * xh[idx];
            dbeta[ch] += g[idx];
          }
      detail::accumulate_grad(gamma, dgamma);
      detail::accumulate_grad(beta, dbeta);
      if (input.requires_grad()) {
        auto gm = gamma.data();
        std::vector<Real> dx(input.numel());
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const Real k0 = gm[ch] * inv_std[ch];
            for (std::size_t k = 0; k < hw; ++k) {
              const std::size_t idx = (i * c + ch) * hw + k;
              dx[idx] = train ? k0 * (g[idx] - dbeta[ch] / n - xh[idx] * dgamma[ch] / n) : k0 * g[idx];
            }
          }
        detail::accumulate_grad(input, dx);
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool");
  const std::size_t b = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor out = Tensor::zeros({b, c});
  auto x = input.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < b * c; ++i) {
    Real s = 0;
    for (std::size_t k = 0; k < hw; ++k) s += x[i * hw + k];
    y[i] = s / static_cast<Real>(hw);
  }
  if (detail::should_record({&input})) {
    detail::record(out, {input}, [input, b, c, hw](std::span<const Real> g) {
      std::vector<Real> dx(input.numel());
      const Real inv = Real(1) / static_cast<Real>(hw);
      for (std::size_t i = 0; i < b * c; ++i)
        for (std::size_t k = 0; k < hw; ++k) dx[i * hw + k] = g[i] * inv;
      detail::accumulate_grad(input, dx);
    });
  }
  return out;
}

// ------------------------------------------------------------ softmax & loss

Tensor log_softmax(const Tensor& logits) {
  require_rank(logits, 2, "log_softmax");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor out = Tensor::zeros(logits.shape());
  auto x = logits.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    Real s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(x[r * cols + j] - mx);
    const Real lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = x[r * cols + j] - lse;
  }
  if (detail::should_record({&logits})) {
    detail::record(out, {logits}, [logits, out, rows, cols](std::span<const Real> g) {
      auto ls = out.data();
      std::vector<Real> dx(rows * cols);
      for (std::size_t r = 0; r < rows; ++r) {
        Real gs = 0;
        for (std::size_t j = 0; j < cols; ++j) gs += g[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j)
          dx[r * cols + j] = g[r * cols + j] - std::exp(ls[r * cols + j]) * gs;
      }
      detail::accumulate_grad(logits, dx);
    });
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor out = Tensor::zeros(logits.shape());
  auto x = logits.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    Real s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += (y[r * cols + j] = std::exp(x[r * cols + j] - mx));
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] /= s;
  }
  if (detail::should_record({&logits})) {
    detail::record(out, {logits}, [logits, out, rows, cols](std::span<const Real> g) {
      auto p = out.data();
      std::vector<Real> dx(rows * cols);
      for (std::size_t r = 0; r < rows; ++r) {
        Real dot = 0;
        for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * p[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j) dx[r * cols + j] = p[r * cols + j] * (g[r * cols + j] - dot);
      }
      detail::accumulate_grad(logits, dx);
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, Reduction reduction) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows) {
    throw Error("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  }
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= cols) {
      throw Error("cross_entropy: label " + std::to_string(l) + " out of range [0," + std::to_string(cols) + ")");
    }
  auto x = logits.data();
  std::vector<Real> probs(rows * cols);
  Real total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    Real s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += (probs[r * cols + j] = std::exp(x[r * cols + j] - mx));
    for (std::size_t j = 0; j < cols; ++j) probs[r * cols + j] /= s;
    total += mx + std::log(s) - x[r * cols + static_cast<std::size_t>(labels[r])];
  }
  const Real norm = reduction == Reduction::Mean ? Real(1) / static_cast<Real>(rows) : Real(1);
  Tensor out = Tensor::scalar(total * norm);
  if (detail::should_record({&logits})) {
    std::vector<int> lab(labels.begin(), labels.end());
    detail::record(out, {logits}, [logits, probs = std::move(probs), lab = std::move(lab), rows, cols, norm](std::span<const Real> g) {
      std::vector<Real> dx(rows * cols);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) {
          const Real onehot = static_cast<std::size_t>(lab[r]) == j ? Real(1) : Real(0);
          dx[r * cols + j] = g[0] * norm * (probs[r * cols + j] - onehot);
        }
      detail::accumulate_grad(logits, dx);
    });
  }
  return out;
}

// ------------------------------------------------------------ graph helpers

Tensor pairwise_abs_diff(const Tensor& x) {
  require_rank(x, 2, "pairwise_abs_diff");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({n * n, d});
  auto v = x.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) y[(i * n + j) * d + k] = std::abs(v[i * d + k] - v[j * d + k]);
  if (detail::should_record({&x})) {
    detail::record(out, {x}, [x, n, d](std::span<const Real> g) {
      auto v = x.data();
      std::vector<Real> dx(n * d, Real(0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t k = 0; k < d; ++k) {
            const Real diff = v[i * d + k] - v[j * d + k];
            const Real s = diff > 0 ? Real(1) : (diff < 0 ? Real(-1) : Real(0));
            const Real gv = g[(i * n + j) * d + k] * s;
            dx[i * d + k] += gv;
            dx[j * d + k] -= gv;
          }
      detail::accumulate_grad(x, dx);
    });
  }
  return out;
}

Tensor row_normalize(const Tensor& a) {
  require_rank(a, 2, "row_normalize");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto x = a.data();
  std::vector<Real> sums(m, Real(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) sums[i] += x[i * n + j];
    if (!(sums[i] > Real(0))) throw Error("row_normalize: row " + std::to_string(i) + " has non-positive sum");
  }
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] / sums[i];
  if (detail::should_record({&a})) {
    detail::record(out, {a}, [a, out, sums, m, n](std::span<const Real> g) {
      auto y = out.data();
      std::vector<Real> dx(m * n);
      for (std::size_t i = 0; i < m; ++i) {
        Real dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = (g[i * n + j] - dot) / sums[i];
      }
      detail::accumulate_grad(a, dx);
    });
  }
  return out;
}

Tensor squared_distances(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "squared_distances");
  require_rank(b, 2, "squared_distances");
  const std::size_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  if (b.dim(1) != d) throw Error("squared_distances: feature dimension mismatch");
  Tensor out = Tensor::zeros({m, n});
  auto x = a.data();
  auto z = b.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const Real diff = x[i * d + k] - z[j * d + k];
        s += diff * diff;
      }
      y[i * n + j] = s;
    }
  if (detail::should_record({&a, &b})) {
    detail::record(out, {a, b}, [a, b, m, n, d](std::span<const Real> g) {
      auto x = a.data();
      auto z = b.data();
      std::vector<Real> da(m * d, Real(0)), db(n * d, Real(0));
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const Real gij = Real(2) * g[i * n + j];
          for (std::size_t k = 0; k < d; ++k) {
            const Real diff = x[i * d + k] - z[j * d + k];
            da[i * d + k] += gij * diff;
            db[j * d + k] -= gij * diff;
          }
        }
      detail::accumulate_grad(a, da);
      detail::accumulate_grad(b, db);
    });
  }
  return out;
}

Tensor roll2d(const Tensor& a, std::ptrdiff_t shift_h, std::ptrdiff_t shift_w) {
  if (a.rank() < 2) throw Error("roll2d: need at least two axes");
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  const std::size_t planes = a.numel() / (h * w);
  auto wrap = [](std::ptrdiff_t s, std::size_t n) {
    const auto m = static_cast<std::ptrdiff_t>(n);
    return static_cast<std::size_t>(((s % m) + m) % m);
  };
  const std::size_t sh = wrap(shift_h, h), sw = wrap(shift_w, w);
  auto permute = [h, w, planes](std::span<const Real> src, std::span<Real> dst, std::size_t dh, std::size_t dw) {
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
          dst[p * h * w + ((r + dh) % h) * w + (c + dw) % w] = src[p * h * w + r * w + c];
  };
  Tensor out = Tensor::zeros(a.shape());
  permute(a.data(), out.mutable_data(), sh, sw);
  if (detail::should_record({&a})) {
    detail::record(out, {a}, [a, permute, h, w, sh, sw](std::span<const Real> g) {
      std::vector<Real> d(a.numel());
      permute(g, d, (h - sh) % h, (w - sw) % w);
      detail::accumulate_grad(a, d);
    });
  }
  return out;
}

}  // namespace freqgrl
