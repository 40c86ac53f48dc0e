#pragma once

#include <span>
#include <vector>

#include "freqgrl/tensor.hpp"

namespace freqgrl {

// Elementwise (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

// Reductions to a scalar (shape []).
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

/// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// a[M,N] + bias[N] broadcast over rows.
Tensor add_row_bias(const Tensor& a, const Tensor& bias);

/// a[L..., T...] * w[T...]: w is broadcast over the leading dimensions.
/// Both a and w may require gradients.
Tensor mul_broadcast(const Tensor& a, const Tensor& w);
/// Multiplies by a constant pattern broadcast over the leading dimensions.
Tensor mul_const(const Tensor& a, std::span<const Real> pattern);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

/// Cross-correlation over [B,C,H,W] with kernel [O,C,kh,kw]; bias may be
/// undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);
Shape conv2d_output_shape(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t padding);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  Real momentum = Real(0.1);
  Real eps = Real(1e-5);

  explicit BatchNormState(std::size_t channels = 0);
};

enum class BnMode { Train, Eval };

/// Per-channel normalization of [B,C,H,W]. Train mode normalizes with batch
/// statistics over (B,H,W) and updates the running statistics; eval mode uses
/// the running statistics.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   BnMode mode);

/// [B,C,H,W] -> [B,C].
Tensor global_avg_pool(const Tensor& input);

/// Row-wise over [B,N].
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

enum class Reduction { Sum, Mean };

/// Log-sum-exp stabilized cross-entropy over rows of [B,N].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, Reduction reduction = Reduction::Mean);

/// [N,D] -> [N*N,D] with row i*N+j = |x_i - x_j|.
Tensor pairwise_abs_diff(const Tensor& x);
/// Divides each row of [N,M] by its sum.
Tensor row_normalize(const Tensor& a);
/// [M,D], [N,D] -> [M,N] squared Euclidean distances.
Tensor squared_distances(const Tensor& a, const Tensor& b);

/// Circular shift of the last two axes: out[(h+sh)%H, (w+sw)%W] = in[h,w].
Tensor roll2d(const Tensor& a, std::ptrdiff_t shift_h, std::ptrdiff_t shift_w);

}  // namespace freqgrl
