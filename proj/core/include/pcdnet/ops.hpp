#pragma once

#include <span>
#include <utility>
#include <vector>

#include "pcdnet/tensor.hpp"

namespace pcdnet {

// Epsilon added under the square root of every standard deviation so the
// statistics stay differentiable on degenerate (constant) inputs.
inline constexpr double kStdEps = 1e-5;

// Matrix product of a[m,k] and b[k,n]. Differentiable in both inputs.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise ops with trailing-dimension broadcasting. A scalar (rank-0)
// tensor broadcasts everywhere.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, T s);

// Multiplication by a host scalar.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

// max(x, 0); the gradient at exactly 0 is defined as 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& a);

// Sum of all elements, as a rank-0 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

// Mean and population standard deviation over the given axes (removed from
// the output shape). std = sqrt(var + kStdEps). Both outputs differentiable.
// The reductions are order-invariant: permuting entries along reduced axes
// produces bit-identical statistics.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> reduce_stats(const Tensor<T>& x, std::vector<std::size_t> axes);

// Concatenation along an axis; all other extents must agree.
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);

// 2D cross-correlation of x[c_in,h,w] with k[c_out,c_in,kh,kw], zero padding.
// out spatial size: floor((h + 2 pad - kh) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, std::size_t pad);

// Bilinear interpolation of map[c,h,w] at coords[n,2] = (u, v) in continuous
// pixel space (u along width). Coordinates are clamped to the border, making
// the op total; differentiable w.r.t. both map and coords.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& coords);

// Same data, new shape (sizes must match).
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Replicates a rank-1 row of d values into an [n,d] tensor.
template <typename T>
Tensor<T> tile_rows(const Tensor<T>& row, std::size_t n);

}  // namespace pcdnet
