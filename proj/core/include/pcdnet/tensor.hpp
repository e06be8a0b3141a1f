#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcdnet/errors.hpp"

namespace pcdnet {

// Dense row-major shape. Rank 0 denotes a scalar (size 1).
using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// Order-invariant accumulation: signed zeros are canonicalized and the terms
// summed in sorted order, so any permutation of xs gives the bit-identical
// result. Used wherever a reduction over an unordered set must not depend on
// the storage order of the set (feature statistics, Chamfer terms).
template <typename T>
T canonical_sum(std::span<const T> xs, std::vector<T>& scratch);

template <typename T>
T canonical_sum(std::span<const T> xs);

namespace detail {

template <typename T>
struct TensorNode;

// Adjoint buffers for one backward sweep. Keyed by node so that concurrent
// sweeps over disjoint graphs never touch shared storage.
template <typename T>
struct AdjointStore {
  std::unordered_map<const TensorNode<T>*, std::vector<T>> buffers;

  std::vector<T>& at(const TensorNode<T>* n);
};

template <typename T>
using BackwardFn =
    std::function<void(const TensorNode<T>&, const std::vector<T>&, AdjointStore<T>&)>;

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // leaf accumulator, lazily allocated
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t seq = 0;  // creation order; parents always precede children
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  BackwardFn<T> backward;
};

std::uint64_t next_seq();

}  // namespace detail

// Whether newly created ops record the backward graph on this thread.
bool grad_enabled();

// Scoped "inference mode": disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense n-dimensional array participating in a reverse-mode differentiation
// graph. Copies are shallow (shared node); values are immutable once a tensor
// has entered a graph, except for gradient accumulation on leaves and
// explicit parameter updates between graph builds.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{}); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<const T> values() const { return node_->value; }
  // Direct mutable access. Only meaningful on leaves that are not currently
  // referenced by a recorded graph (initialization, optimizer updates).
  std::span<T> values_mut() { return node_->value; }

  T item() const;
  T at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  Tensor& set_requires_grad(bool b = true);

  // Accumulated gradient; empty span when never populated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut();
  void zero_grad();

  // Deep copy, detached from any graph.
  Tensor clone() const;
  // Leaf view of the same values (copied), no graph history.
  Tensor detach() const { return clone(); }

  // Graph plumbing for op implementations.
  const std::shared_ptr<detail::TensorNode<T>>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::TensorNode<T>> node);

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

// Accumulates d(loss)/d(theta) into the grad buffer of every requires_grad
// leaf reachable from loss. Repeated calls accumulate; zero_grad resets.
template <typename T>
void backward(const Tensor<T>& loss);

// Per-leaf gradients of one backward sweep, keyed by node. Lets independent
// losses over shared parameters run concurrently and be reduced in a fixed
// order afterwards.
template <typename T>
using GradMap = std::unordered_map<const detail::TensorNode<T>*, std::vector<T>>;

template <typename T>
void backward_into(const Tensor<T>& loss, GradMap<T>& sink);

Tensor<double> to_f64(const Tensor<float>& t);
Tensor<float> to_f32(const Tensor<double>& t);

}  // namespace pcdnet
