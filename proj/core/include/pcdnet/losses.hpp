#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pcdnet/tensor.hpp"

namespace pcdnet {

// Nearest-neighbor backend for the Chamfer loss. Both backends are exact and
// break distance ties by lowest point index, so they return identical pairings.
struct NNBackend {
  enum class Kind { kBruteForce, kUniformGrid };
  Kind kind = Kind::kUniformGrid;
  // Grid cell edge in world units; 0 selects (joint bbox diagonal) / 32.
  double cell_size = 0.0;

  static NNBackend brute_force() { return {Kind::kBruteForce, 0.0}; }
  static NNBackend uniform_grid(double cell = 0.0) { return {Kind::kUniformGrid, cell}; }
};

NNBackend nn_backend_from_string(const std::string& s);
std::string to_string(const NNBackend& b);

// Exact nearest-neighbor index in `targets` for every row of `queries`
// (both [n,3]); exposed for oracle tests.
template <typename T>
std::vector<std::size_t> nearest_indices(const Tensor<T>& queries, const Tensor<T>& targets,
                                         const NNBackend& backend);

// Symmetric Chamfer distance between point sets x[n,3] and y[m,3]:
// mean of squared nearest-neighbor distances in both directions. The backward
// pass holds the argmin pairing fixed. Per-direction sums are order-invariant,
// so permuting either point set leaves the value bit-identical.
template <typename T>
Tensor<T> chamfer(const Tensor<T>& x, const Tensor<T>& y,
                  const NNBackend& backend = NNBackend::uniform_grid());

// Occupancy intersection-over-union after voxelizing both clouds into an
// R^3 grid over their joint bounding box expanded by 2%. Evaluation only.
template <typename T>
double iou_voxel(const Tensor<T>& x, const Tensor<T>& y, std::size_t resolution = 32);

// lambda * sum of squared parameter entries, differentiable.
template <typename T>
Tensor<T> l2_penalty(std::span<const Tensor<T>> params, double lambda = 1e-5);

}  // namespace pcdnet
