#include "pcdnet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace pcdnet {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream ss;
  ss << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) ss << ",";
    ss << s[i];
  }
  ss << ")";
  return ss.str();
}

template <typename T>
T canonical_sum(std::span<const T> xs, std::vector<T>& scratch) {
  scratch.assign(xs.begin(), xs.end());
  for (T& v : scratch) v += T(0);  // -0 -> +0
  std::sort(scratch.begin(), scratch.end());
  T acc = T(0);
  for (T v : scratch) acc += v;
  return acc;
}

template <typename T>
T canonical_sum(std::span<const T> xs) {
  std::vector<T> scratch;
  return canonical_sum(xs, scratch);
}

template float canonical_sum<float>(std::span<const float>, std::vector<float>&);
template double canonical_sum<double>(std::span<const double>, std::vector<double>&);
template float canonical_sum<float>(std::span<const float>);
template double canonical_sum<double>(std::span<const double>);

namespace detail {

std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
std::vector<T>& AdjointStore<T>::at(const TensorNode<T>* n) {
  auto [it, inserted] = buffers.try_emplace(n);
  if (inserted) it->second.assign(n->value.size(), T(0));
  return it->second;
}

template struct AdjointStore<float>;
template struct AdjointStore<double>;

}  // namespace detail

namespace {

thread_local bool tls_grad_enabled = true;

}  // namespace

bool grad_enabled() { return tls_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tls_grad_enabled) { tls_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tls_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) {
  node_ = std::make_shared<detail::TensorNode<T>>();
  node_->value.assign(shape_size(shape), fill);
  node_->shape = std::move(shape);
  node_->seq = detail::next_seq();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " wants " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::TensorNode<T>>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->seq = detail::next_seq();
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  }
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != rank()) {
    throw DimensionError("at: index rank " + std::to_string(idx.size()) +
                         " vs tensor rank " + std::to_string(rank()));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= node_->shape[axis]) {
      throw DimensionError("at: index out of range on axis " + std::to_string(axis));
    }
    off = off * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[off];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool b) {
  if (!node_->leaf) {
    throw ContractError("set_requires_grad: only valid on leaf tensors");
  }
  node_->requires_grad = b;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad_mut() {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(node_->shape, node_->value);
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<detail::TensorNode<T>> node) {
  Tensor out;
  out.node_ = std::move(node);
  return out;
}

namespace {

template <typename T>
void run_backward(const Tensor<T>& loss, GradMap<T>* sink) {
  using Node = detail::TensorNode<T>;
  if (loss.size() != 1) {
    throw ContractError("backward: loss of shape " + shape_str(loss.shape()) +
                        " is not scalar");
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing reachable to differentiate

  // Reachable differentiable subgraph, then reverse creation order, which is
  // a topological order by construction.
  std::vector<Node*> order;
  std::vector<Node*> stack{root};
  std::unordered_map<const Node*, bool> seen;
  seen[root] = true;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && !seen[p.get()]) {
        seen[p.get()] = true;
        stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  detail::AdjointStore<T> store;
  store.at(root)[0] = T(1);
  for (Node* n : order) {
    if (!n->backward) continue;
    auto it = store.buffers.find(n);
    if (it == store.buffers.end()) continue;
    n->backward(*n, it->second, store);
  }

  for (Node* n : order) {
    if (!n->leaf || !n->requires_grad) continue;
    auto it = store.buffers.find(n);
    if (it == store.buffers.end()) continue;
    if (sink != nullptr) {
      auto [dst, inserted] = sink->try_emplace(n);
      if (inserted) {
        dst->second = std::move(it->second);
      } else {
        for (std::size_t i = 0; i < dst->second.size(); ++i) dst->second[i] += it->second[i];
      }
    } else {
      if (n->grad.empty()) n->grad.assign(n->value.size(), T(0));
      const auto& g = it->second;
      for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
    }
  }
}

}  // namespace

template <typename T>
void backward(const Tensor<T>& loss) {
  run_backward<T>(loss, nullptr);
}

template <typename T>
void backward_into(const Tensor<T>& loss, GradMap<T>& sink) {
  run_backward<T>(loss, &sink);
}

Tensor<double> to_f64(const Tensor<float>& t) {
  std::vector<double> v(t.values().begin(), t.values().end());
  return Tensor<double>(t.shape(), std::move(v));
}

Tensor<float> to_f32(const Tensor<double>& t) {
  std::vector<float> v(t.values().begin(), t.values().end());
  return Tensor<float>(t.shape(), std::move(v));
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template void backward_into<float>(const Tensor<float>&, GradMap<float>&);
template void backward_into<double>(const Tensor<double>&, GradMap<double>&);

}  // namespace pcdnet
