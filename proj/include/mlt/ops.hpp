#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mlt/tensor.hpp"

namespace mlt {

// Elementwise binary ops broadcast with trailing-dimension alignment.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator-(const Tensor& x) { return scale(x, -1.0); }

/// Shape the broadcast of `a` and `b` would produce.
Shape broadcast_shape(const Shape& a, const Shape& b);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

/// Batched matrix product over the last two axes: [.., m, k] x [.., k, n].
/// Leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

/// Sum of all elements as a rank-0 tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum along `axis`, which is removed from the result.
Tensor sum_axis(const Tensor& x, int axis);

/// Rows `indices` of a [V x d] table, shape [indices.size() x d].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Exact x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Natural log; throws std::domain_error on non-positive input.
Tensor log(const Tensor& x);
/// Gradient passes where lo <= x <= hi and is zero elsewhere.
Tensor clamp(const Tensor& x, double lo, double hi);

/// Inverted dropout. Identity (the same handle) when not training or rate 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

}  // namespace mlt
