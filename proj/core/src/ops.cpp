#include "pcdnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "pcdnet/parallel.hpp"

namespace pcdnet {
namespace {

using std::size_t;

template <typename T>
using Node = detail::TensorNode<T>;

template <typename T>
using NodePtr = std::shared_ptr<detail::TensorNode<T>>;

template <typename T>
NodePtr<T> make_node(Shape shape, std::vector<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = detail::next_seq();
  return n;
}

template <typename T>
bool track_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void attach(const NodePtr<T>& out, std::vector<NodePtr<T>> parents, detail::BackwardFn<T> fn) {
  out->requires_grad = true;
  out->leaf = false;
  out->parents = std::move(parents);
  out->backward = std::move(fn);
}

// --- broadcasting -----------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcastable");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `s` right-aligned into `out`, 0 on broadcast axes.
std::vector<size_t> aligned_strides(const Shape& s, const Shape& out) {
  std::vector<size_t> strides(out.size(), 0);
  size_t stride = 1;
  for (size_t i = 0; i < s.size(); ++i) {
    const size_t axis = s.size() - 1 - i;
    const size_t out_axis = out.size() - 1 - i;
    strides[out_axis] = (s[axis] == 1) ? 0 : stride;
    stride *= s[axis];
  }
  return strides;
}

// Calls f(linear_out, offset_a, offset_b) for every element of `out`.
template <class F>
void for_each_bcast(const Shape& out, const std::vector<size_t>& sa,
                    const std::vector<size_t>& sb, F&& f) {
  const size_t n = shape_size(out);
  if (n == 0) return;
  const size_t rank = out.size();
  std::vector<size_t> idx(rank, 0);
  size_t oa = 0, ob = 0;
  for (size_t lin = 0;; ++lin) {
    f(lin, oa, ob);
    if (lin + 1 == n) break;
    for (size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax]) break;
      oa -= sa[ax] * out[ax];
      ob -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinKind { kAdd, kSub, kMul, kDiv };

template <typename T>
Tensor<T> binary_op(BinKind kind, const Tensor<T>& a, const Tensor<T>& b, const char* name) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const size_t n = shape_size(out_shape);
  std::vector<T> out(n);
  const T* pa = a.values().data();
  const T* pb = b.values().data();

  if (a.shape() == b.shape()) {
    switch (kind) {
      case BinKind::kAdd:
        for (size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
        break;
      case BinKind::kSub:
        for (size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
        break;
      case BinKind::kMul:
        for (size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
        break;
      case BinKind::kDiv:
        for (size_t i = 0; i < n; ++i) out[i] = pa[i] / pb[i];
        break;
    }
  } else {
    const auto sa = aligned_strides(a.shape(), out_shape);
    const auto sb = aligned_strides(b.shape(), out_shape);
    switch (kind) {
      case BinKind::kAdd:
        for_each_bcast(out_shape, sa, sb,
                       [&](size_t o, size_t i, size_t j) { out[o] = pa[i] + pb[j]; });
        break;
      case BinKind::kSub:
        for_each_bcast(out_shape, sa, sb,
                       [&](size_t o, size_t i, size_t j) { out[o] = pa[i] - pb[j]; });
        break;
      case BinKind::kMul:
        for_each_bcast(out_shape, sa, sb,
                       [&](size_t o, size_t i, size_t j) { out[o] = pa[i] * pb[j]; });
        break;
      case BinKind::kDiv:
        for_each_bcast(out_shape, sa, sb,
                       [&](size_t o, size_t i, size_t j) { out[o] = pa[i] / pb[j]; });
        break;
    }
  }

  auto node = make_node<T>(out_shape, std::move(out));
  if (track_grad<T>({&a, &b})) {
    attach<T>(node, {a.node(), b.node()},
              [kind](const Node<T>& self, const std::vector<T>& g, detail::AdjointStore<T>& st) {
                const auto& pa_node = self.parents[0];
                const auto& pb_node = self.parents[1];
                const auto sa = aligned_strides(pa_node->shape, self.shape);
                const auto sb = aligned_strides(pb_node->shape, self.shape);
                const T* av = pa_node->value.data();
                const T* bv = pb_node->value.data();
                const bool need_a = pa_node->requires_grad;
                const bool need_b = pb_node->requires_grad;
                std::vector<T>* ga = need_a ? &st.at(pa_node.get()) : nullptr;
                std::vector<T>* gb = need_b ? &st.at(pb_node.get()) : nullptr;
                for_each_bcast(self.shape, sa, sb, [&](size_t o, size_t i, size_t j) {
                  const T go = g[o];
                  switch (kind) {
                    case BinKind::kAdd:
                      if (ga) (*ga)[i] += go;
                      if (gb) (*gb)[j] += go;
                      break;
                    case BinKind::kSub:
                      if (ga) (*ga)[i] += go;
                      if (gb) (*gb)[j] -= go;
                      break;
                    case BinKind::kMul:
                      if (ga) (*ga)[i] += go * bv[j];
                      if (gb) (*gb)[j] += go * av[i];
                      break;
                    case BinKind::kDiv:
                      if (ga) (*ga)[i] += go / bv[j];
                      if (gb) (*gb)[j] -= go * av[i] / (bv[j] * bv[j]);
                      break;
                  }
                });
              });
  }
  return Tensor<T>::from_node(node);
}

}  // namespace

// --- matmul ------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<T> out(m * n, T(0));
  const T* pa = a.values().data();
  const T* pb = b.values().data();
  T* pc = out.data();

  parallel_for(
      m,
      [&](size_t r0, size_t r1) {
        for (size_t i = r0; i < r1; ++i) {
          const T* arow = pa + i * k;
          T* crow = pc + i * n;
          for (size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = pb + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
          }
        }
      },
      std::max<size_t>(1, 65536 / std::max<size_t>(1, k * n)));

  auto node = make_node<T>(Shape{m, n}, std::move(out));
  if (track_grad<T>({&a, &b})) {
    attach<T>(node, {a.node(), b.node()},
              [m, k, n](const Node<T>& self, const std::vector<T>& g,
                        detail::AdjointStore<T>& st) {
                const auto& an = self.parents[0];
                const auto& bn = self.parents[1];
                const T* av = an->value.data();
                const T* bv = bn->value.data();
                const T* pg = g.data();
                if (an->requires_grad) {
                  // dA[i,p] = sum_j g[i,j] B[p,j]
                  T* ga = st.at(an.get()).data();
                  parallel_for(
                      m,
                      [&](size_t r0, size_t r1) {
                        for (size_t i = r0; i < r1; ++i) {
                          const T* grow = pg + i * n;
                          T* garow = ga + i * k;
                          for (size_t p = 0; p < k; ++p) {
                            const T* brow = bv + p * n;
                            T acc = T(0);
                            for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            garow[p] += acc;
                          }
                        }
                      },
                      std::max<size_t>(1, 65536 / std::max<size_t>(1, k * n)));
                }
                if (bn->requires_grad) {
                  // dB[p,j] = sum_i A[i,p] g[i,j]
                  T* gb = st.at(bn.get()).data();
                  parallel_for(
                      k,
                      [&](size_t p0, size_t p1) {
                        for (size_t p = p0; p < p1; ++p) {
                          T* gbrow = gb + p * n;
                          for (size_t i = 0; i < m; ++i) {
                            const T av_ip = av[i * k + p];
                            if (av_ip == T(0)) continue;
                            const T* grow = pg + i * n;
                            for (size_t j = 0; j < n; ++j) gbrow[j] += av_ip * grow[j];
                          }
                        }
                      },
                      std::max<size_t>(1, 65536 / std::max<size_t>(1, m * n)));
                }
              });
  }
  return Tensor<T>::from_node(node);
}

// --- elementwise -------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinKind::kAdd, a, b, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinKind::kSub, a, b, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinKind::kMul, a, b, "mul");
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinKind::kDiv, a, b, "div");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T s) {
  return add(a, Tensor<T>::scalar(s));
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, T s) {
  return sub(a, Tensor<T>::scalar(s));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  const size_t n = a.size();
  std::vector<T> out(n);
  const T* pa = a.values().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] * s;
  auto node = make_node<T>(a.shape(), std::move(out));
  if (track_grad<T>({&a})) {
    attach<T>(node, {a.node()},
              [s](const Node<T>& self, const std::vector<T>& g, detail::AdjointStore<T>& st) {
                const auto& an = self.parents[0];
                if (!an->requires_grad) return;
                std::vector<T>& ga = st.at(an.get());
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
              });
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  const size_t n = a.size();
  std::vector<T> out(n);
  const T* pa = a.values().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] > T(0) ? pa[i] : T(0);
  auto node = make_node<T>(a.shape(), std::move(out));
  if (track_grad<T>({&a})) {
    attach<T>(node, {a.node()},
              [](const Node<T>& self, const std::vector<T>& g, detail::AdjointStore<T>& st) {
                const auto& an = self.parents[0];
                if (!an->requires_grad) return;
                const T* x = an->value.data();
                std::vector<T>& ga = st.at(an.get());
                for (size_t i = 0; i < g.size(); ++i) {
                  if (x[i] > T(0)) ga[i] += g[i];
                }
              });
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  auto node = make_node<T>(Shape{}, std::vector<T>{acc});
  if (track_grad<T>({&a})) {
    attach<T>(node, {a.node()},
              [](const Node<T>& self, const std::vector<T>& g, detail::AdjointStore<T>& st) {
                const auto& an = self.parents[0];
                if (!an->requires_grad) return;
                std::vector<T>& ga = st.at(an.get());
                for (T& v : ga) v += g[0];
              });
  }
  return Tensor<T>::from_node(node);
}

// --- reduce_stats ------------------------------------------------------------

namespace {

struct StatsPlan {
  Shape out_shape;
  std::vector<size_t> out_stride;   // per input axis; 0 on reduced axes
  std::vector<size_t> slot_stride;  // per input axis; 0 on kept axes
  size_t count = 1;                 // number of reduced elements per cell
};

StatsPlan stats_plan(const Shape& shape, const std::vector<size_t>& axes, const char* op) {
  const size_t rank = shape.size();
  std::vector<bool> reduced(rank, false);
  for (size_t ax : axes) {
    if (ax >= rank) {
      throw DimensionError(std::string(op) + ": axis " + std::to_string(ax) +
                           " out of range for shape " + shape_str(shape));
    }
    if (reduced[ax]) {
      throw DimensionError(std::string(op) + ": duplicate axis " + std::to_string(ax));
    }
    reduced[ax] = true;
  }
  StatsPlan plan;
  for (size_t ax = 0; ax < rank; ++ax) {
    if (reduced[ax]) {
      if (shape[ax] == 0) {
        throw DomainError(std::string(op) + ": empty reduction extent on axis " +
                          std::to_string(ax));
      }
      plan.count *= shape[ax];
    } else {
      plan.out_shape.push_back(shape[ax]);
    }
  }
  plan.out_stride.assign(rank, 0);
  plan.slot_stride.assign(rank, 0);
  size_t ostride = 1, sstride = 1;
  for (size_t i = rank; i-- > 0;) {
    if (reduced[i]) {
      plan.slot_stride[i] = sstride;
      sstride *= shape[i];
    } else {
      plan.out_stride[i] = ostride;
      ostride *= shape[i];
    }
  }
  return plan;
}

// Calls f(linear_input, out_cell, slot) over all input elements.
template <class F>
void for_each_stats(const Shape& shape, const StatsPlan& plan, F&& f) {
  const size_t n = shape_size(shape);
  if (n == 0) return;
  const size_t rank = shape.size();
  std::vector<size_t> idx(rank, 0);
  size_t cell = 0, slot = 0;
  for (size_t lin = 0;; ++lin) {
    f(lin, cell, slot);
    if (lin + 1 == n) break;
    for (size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      cell += plan.out_stride[ax];
      slot += plan.slot_stride[ax];
      if (idx[ax] < shape[ax]) break;
      cell -= plan.out_stride[ax] * shape[ax];
      slot -= plan.slot_stride[ax] * shape[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> reduce_stats(const Tensor<T>& x, std::vector<size_t> axes) {
  const StatsPlan plan = stats_plan(x.shape(), axes, "reduce_stats");
  const size_t cells = shape_size(plan.out_shape);
  const size_t count = plan.count;

  // Group values per output cell so each cell can be reduced order-invariantly.
  std::vector<T> grouped(cells * count);
  const T* px = x.values().data();
  for_each_stats(x.shape(), plan,
                 [&](size_t lin, size_t cell, size_t slot) { grouped[cell * count + slot] = px[lin]; });

  std::vector<T> mean(cells), stddev(cells);
  std::vector<T> scratch, sq(count);
  for (size_t c = 0; c < cells; ++c) {
    std::span<const T> vals(grouped.data() + c * count, count);
    const T m = canonical_sum(vals, scratch) / static_cast<T>(count);
    for (size_t s = 0; s < count; ++s) {
      const T d = vals[s] - m;
      sq[s] = d * d;
    }
    const T var = canonical_sum(std::span<const T>(sq.data(), count), scratch) /
                  static_cast<T>(count);
    mean[c] = m;
    stddev[c] = std::sqrt(var + static_cast<T>(kStdEps));
  }

  auto mean_node = make_node<T>(plan.out_shape, std::move(mean));
  auto std_node = make_node<T>(plan.out_shape, std::move(stddev));

  if (track_grad<T>({&x})) {
    const auto axes_copy = axes;
    attach<T>(mean_node, {x.node()},
              [axes_copy](const Node<T>& self, const std::vector<T>& g,
                          detail::AdjointStore<T>& st) {
                const auto& xn = self.parents[0];
                if (!xn->requires_grad) return;
                const StatsPlan plan = stats_plan(xn->shape, axes_copy, "reduce_stats");
                const T inv = T(1) / static_cast<T>(plan.count);
                std::vector<T>& gx = st.at(xn.get());
                for_each_stats(xn->shape, plan, [&](size_t lin, size_t cell, size_t) {
                  gx[lin] += g[cell] * inv;
                });
              });
    // d std / d x_i = (x_i - mean) / (count * std)
    std::vector<T> mean_copy(mean_node->value);
    std::vector<T> std_copy(std_node->value);
    attach<T>(std_node, {x.node()},
              [axes_copy, mean_copy, std_copy](const Node<T>& self, const std::vector<T>& g,
                                               detail::AdjointStore<T>& st) {
                const auto& xn = self.parents[0];
                if (!xn->requires_grad) return;
                const StatsPlan plan = stats_plan(xn->shape, axes_copy, "reduce_stats");
                const T inv = T(1) / static_cast<T>(plan.count);
                const T* xv = xn->value.data();
                std::vector<T>& gx = st.at(xn.get());
                for_each_stats(xn->shape, plan, [&](size_t lin, size_t cell, size_t) {
                  gx[lin] += g[cell] * (xv[lin] - mean_copy[cell]) / std_copy[cell] * inv;
                });
              });
  }
  return {Tensor<T>::from_node(mean_node), Tensor<T>::from_node(std_node)};
}

// --- concat ------------------------------------------------------------------

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  const size_t rank = parts[0].rank();
  if (axis >= rank) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  Shape out_shape = parts[0].shape();
  for (size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.size() != rank) {
      throw DimensionError("concat: part " + std::to_string(p) + " has rank " +
                           std::to_string(s.size()) + ", expected " + std::to_string(rank));
    }
    for (size_t ax = 0; ax < rank; ++ax) {
      if (ax == axis) continue;
      if (s[ax] != out_shape[ax]) {
        throw DimensionError("concat: part " + std::to_string(p) + " shape " + shape_str(s) +
                             " disagrees on axis " + std::to_string(ax));
      }
    }
    out_shape[axis] += s[axis];
  }

  // outer x axis x inner layout
  size_t outer = 1, inner = 1;
  for (size_t ax = 0; ax < axis; ++ax) outer *= out_shape[ax];
  for (size_t ax = axis + 1; ax < rank; ++ax) inner *= out_shape[ax];

  std::vector<T> out(shape_size(out_shape));
  const size_t out_row = out_shape[axis] * inner;
  size_t offset = 0;  // in units of inner, along the concat axis
  for (const Tensor<T>& part : parts) {
    const size_t ax_n = part.extent(axis);
    const T* pv = part.values().data();
    for (size_t o = 0; o < outer; ++o) {
      const T* src = pv + o * ax_n * inner;
      T* dst = out.data() + o * out_row + offset;
      std::copy(src, src + ax_n * inner, dst);
    }
    offset += ax_n * inner;
  }

  auto node = make_node<T>(out_shape, std::move(out));
  bool any_grad = false;
  if (grad_enabled()) {
    for (const Tensor<T>& p : parts) any_grad = any_grad || p.requires_grad();
  }
  if (any_grad) {
    std::vector<NodePtr<T>> parents;
    parents.reserve(parts.size());
    for (const Tensor<T>& p : parts) parents.push_back(p.node());
    attach<T>(node, std::move(parents),
              [axis, outer, inner, out_row](const Node<T>& self, const std::vector<T>& g,
                                            detail::AdjointStore<T>& st) {
                size_t offset = 0;
                for (const auto& parent : self.parents) {
                  const size_t ax_n = parent->shape[axis];
                  if (parent->requires_grad) {
                    std::vector<T>& gp = st.at(parent.get());
                    for (size_t o = 0; o < outer; ++o) {
                      const T* src = g.data() + o * out_row + offset;
                      T* dst = gp.data() + o * ax_n * inner;
                      for (size_t i = 0; i < ax_n * inner; ++i) dst[i] += src[i];
                    }
                  }
                  offset += ax_n * inner;
                }
              });
  }
  return Tensor<T>::from_node(node);
}

// --- conv2d ------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, std::size_t pad) {
  if (x.rank() != 3 || k.rank() != 4) {
    throw DimensionError("conv2d: expected x[c,h,w], k[co,ci,kh,kw]; got " +
                         shape_str(x.shape()) + " and " + shape_str(k.shape()));
  }
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  const size_t ci = x.extent(0), h = x.extent(1), w = x.extent(2);
  const size_t co = k.extent(0), kci = k.extent(1), kh = k.extent(2), kw = k.extent(3);
  if (kci != ci) {
    throw DimensionError("conv2d: input channels " + std::to_string(ci) +
                         " vs kernel channels " + std::to_string(kci));
  }
  if (kh > h + 2 * pad || kw > w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(k.shape()) +
                         " larger than padded input " + shape_str(x.shape()));
  }
  const size_t ho = (h + 2 * pad - kh) / stride + 1;
  const size_t wo = (w + 2 * pad - kw) / stride + 1;

  std::vector<T> out(co * ho * wo, T(0));
  const T* px = x.values().data();
  const T* pk = k.values().data();
  T* po = out.data();

  parallel_for(
      co,
      [&](size_t c0, size_t c1) {
        for (size_t oc = c0; oc < c1; ++oc) {
          T* omap = po + oc * ho * wo;
          for (size_t oy = 0; oy < ho; ++oy) {
            for (size_t ox = 0; ox < wo; ++ox) {
              T acc = T(0);
              for (size_t icn = 0; icn < ci; ++icn) {
                const T* xmap = px + icn * h * w;
                const T* kmap = pk + (oc * ci + icn) * kh * kw;
                for (size_t ky = 0; ky < kh; ++ky) {
                  const std::ptrdiff_t iy =
                      static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t ix =
                        static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                    acc += xmap[iy * w + ix] * kmap[ky * kw + kx];
                  }
                }
              }
              omap[oy * wo + ox] = acc;
            }
          }
        }
      },
      1);

  auto node = make_node<T>(Shape{co, ho, wo}, std::move(out));
  if (track_grad<T>({&x, &k})) {
    attach<T>(node, {x.node(), k.node()},
              [stride, pad, ci, h, w, co, kh, kw, ho, wo](const Node<T>& self,
                                                          const std::vector<T>& g,
                                                          detail::AdjointStore<T>& st) {
        const auto& xn = self.parents[0];
        const auto& kn = self.parents[1];
        const T* px = xn->value.data();
        const T* pk = kn->value.data();
        const T* pg = g.data();
        if (kn->requires_grad) {
          T* gk = st.at(kn.get()).data();
          parallel_for(
              co,
              [&](size_t c0, size_t c1) {
                for (size_t oc = c0; oc < c1; ++oc) {
                  const T* gmap = pg + oc * ho * wo;
                  for (size_t icn = 0; icn < ci; ++icn) {
                    const T* xmap = px + icn * h * w;
                    T* gkmap = gk + (oc * ci + icn) * kh * kw;
                    for (size_t ky = 0; ky < kh; ++ky) {
                      for (size_t kx = 0; kx < kw; ++kx) {
                        T acc = T(0);
                        for (size_t oy = 0; oy < ho; ++oy) {
                          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                    static_cast<std::ptrdiff_t>(pad);
                          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                          for (size_t ox = 0; ox < wo; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += gmap[oy * wo + ox] * xmap[iy * w + ix];
                          }
                        }
                        gkmap[ky * kw + kx] += acc;
                      }
                    }
                  }
                }
              },
              1);
        }
        if (xn->requires_grad) {
          T* gx = st.at(xn.get()).data();
          parallel_for(
              ci,
              [&](size_t c0, size_t c1) {
                for (size_t icn = c0; icn < c1; ++icn) {
                  T* gxmap = gx + icn * h * w;
                  for (size_t iy = 0; iy < h; ++iy) {
                    for (size_t ix = 0; ix < w; ++ix) {
                      T acc = T(0);
                      for (size_t oc = 0; oc < co; ++oc) {
                        const T* gmap = pg + oc * ho * wo;
                        const T* kmap = pk + (oc * ci + icn) * kh * kw;
                        for (size_t ky = 0; ky < kh; ++ky) {
                          const std::ptrdiff_t oy_num =
                              static_cast<std::ptrdiff_t>(iy + pad) - static_cast<std::ptrdiff_t>(ky);
                          if (oy_num < 0 || oy_num % static_cast<std::ptrdiff_t>(stride) != 0) continue;
                          const size_t oy = static_cast<size_t>(oy_num) / stride;
                          if (oy >= ho) continue;
                          for (size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ox_num =
                                static_cast<std::ptrdiff_t>(ix + pad) - static_cast<std::ptrdiff_t>(kx);
                            if (ox_num < 0 || ox_num % static_cast<std::ptrdiff_t>(stride) != 0)
                              continue;
                            const size_t ox = static_cast<size_t>(ox_num) / stride;
                            if (ox >= wo) continue;
                            acc += gmap[oy * wo + ox] * kmap[ky * kw + kx];
                          }
                        }
                      }
                      gxmap[iy * w + ix] += acc;
                    }
                  }
                }
              },
              1);
        }
      });
  }
  return Tensor<T>::from_node(node);
}

// --- bilinear_sample ----------------------------------------------------------

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& coords) {
  if (map.rank() != 3) {
    throw DimensionError("bilinear_sample: map must be [c,h,w], got " + shape_str(map.shape()));
  }
  if (coords.rank() != 2 || coords.extent(1) != 2) {
    throw DimensionError("bilinear_sample: coords must be [n,2], got " +
                         shape_str(coords.shape()));
  }
  const size_t c = map.extent(0), h = map.extent(1), w = map.extent(2);
  const size_t n = coords.extent(0);
  std::vector<T> out(n * c);
  const T* pm = map.values().data();
  const T* pc = coords.values().data();

  const auto corners = [w, h](T u, T v, size_t& u0, size_t& u1, size_t& v0, size_t& v1, T& au,
                              T& av) {
    const T cu = std::clamp(u, T(0), static_cast<T>(w - 1));
    const T cv = std::clamp(v, T(0), static_cast<T>(h - 1));
    u0 = static_cast<size_t>(std::floor(cu));
    v0 = static_cast<size_t>(std::floor(cv));
    if (u0 >= w - 1) u0 = w > 1 ? w - 2 : 0;
    if (v0 >= h - 1) v0 = h > 1 ? h - 2 : 0;
    u1 = w > 1 ? u0 + 1 : 0;
    v1 = h > 1 ? v0 + 1 : 0;
    au = cu - static_cast<T>(u0);
    av = cv - static_cast<T>(v0);
  };

  parallel_for(
      n,
      [&](size_t i0, size_t i1) {
        for (size_t i = i0; i < i1; ++i) {
          size_t u0, u1, v0, v1;
          T au, av;
          corners(pc[i * 2], pc[i * 2 + 1], u0, u1, v0, v1, au, av);
          const T w00 = (T(1) - av) * (T(1) - au);
          const T w01 = (T(1) - av) * au;
          const T w10 = av * (T(1) - au);
          const T w11 = av * au;
          for (size_t ch = 0; ch < c; ++ch) {
            const T* m = pm + ch * h * w;
            out[i * c + ch] = w00 * m[v0 * w + u0] + w01 * m[v0 * w + u1] +
                              w10 * m[v1 * w + u0] + w11 * m[v1 * w + u1];
          }
        }
      },
      256);

  auto node = make_node<T>(Shape{n, c}, std::move(out));
  if (track_grad<T>({&map, &coords})) {
    attach<T>(node, {map.node(), coords.node()},
              [c, h, w, n, corners](const Node<T>& self, const std::vector<T>& g,
                                    detail::AdjointStore<T>& st) {
        const auto& mn = self.parents[0];
        const auto& cn = self.parents[1];
        const T* pm = mn->value.data();
        const T* pc = cn->value.data();
        T* gm = mn->requires_grad ? st.at(mn.get()).data() : nullptr;
        T* gc = cn->requires_grad ? st.at(cn.get()).data() : nullptr;
        // Map scatter stays sequential: many points can hit the same texel.
        for (size_t i = 0; i < n; ++i) {
          const T u = pc[i * 2], v = pc[i * 2 + 1];
          size_t u0, u1, v0, v1;
          T au, av;
          corners(u, v, u0, u1, v0, v1, au, av);
          const bool u_interior = u > T(0) && u < static_cast<T>(w - 1);
          const bool v_interior = v > T(0) && v < static_cast<T>(h - 1);
          T du = T(0), dv = T(0);
          for (size_t ch = 0; ch < c; ++ch) {
            const T* m = pm + ch * h * w;
            const T go = g[i * c + ch];
            if (gm != nullptr) {
              T* gmap = gm + ch * h * w;
              gmap[v0 * w + u0] += go * (T(1) - av) * (T(1) - au);
              gmap[v0 * w + u1] += go * (T(1) - av) * au;
              gmap[v1 * w + u0] += go * av * (T(1) - au);
              gmap[v1 * w + u1] += go * av * au;
            }
            if (gc != nullptr) {
              du += go * ((T(1) - av) * (m[v0 * w + u1] - m[v0 * w + u0]) +
                          av * (m[v1 * w + u1] - m[v1 * w + u0]));
              dv += go * ((T(1) - au) * (m[v1 * w + u0] - m[v0 * w + u0]) +
                          au * (m[v1 * w + u1] - m[v0 * w + u1]));
            }
          }
          if (gc != nullptr) {
            // Clamped coordinates have zero derivative.
            gc[i * 2] += u_interior ? du : T(0);
            gc[i * 2 + 1] += v_interior ? dv : T(0);
          }
        }
      });
  }
  return Tensor<T>::from_node(node);
}

// --- reshape / tile_rows ------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  auto node = make_node<T>(std::move(shape), std::move(out));
  if (track_grad<T>({&x})) {
    attach<T>(node, {x.node()},
              [](const Node<T>& self, const std::vector<T>& g, detail::AdjointStore<T>& st) {
                const auto& xn = self.parents[0];
                if (!xn->requires_grad) return;
                std::vector<T>& gx = st.at(xn.get());
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
              });
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> tile_rows(const Tensor<T>& row, std::size_t n) {
  if (row.rank() != 1) {
    throw DimensionError("tile_rows: expected rank-1 row, got " + shape_str(row.shape()));
  }
  const size_t d = row.extent(0);
  std::vector<T> out(n * d);
  const T* pr = row.values().data();
  for (size_t i = 0; i < n; ++i) std::copy(pr, pr + d, out.data() + i * d);
  auto node = make_node<T>(Shape{n, d}, std::move(out));
  if (track_grad<T>({&row})) {
    attach<T>(node, {row.node()},
              [n, d](const Node<T>& self, const std::vector<T>& g, detail::AdjointStore<T>& st) {
                const auto& rn = self.parents[0];
                if (!rn->requires_grad) return;
                std::vector<T>& gr = st.at(rn.get());
                for (size_t i = 0; i < n; ++i) {
                  for (size_t j = 0; j < d; ++j) gr[j] += g[i * d + j];
                }
              });
  }
  return Tensor<T>::from_node(node);
}

// --- instantiations ------------------------------------------------------------

#define PCDNET_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> add<T>(const Tensor<T>&, T);                                             \
  template Tensor<T> sub<T>(const Tensor<T>&, T);                                             \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                           \
  template Tensor<T> relu<T>(const Tensor<T>&);                                               \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                \
  template std::pair<Tensor<T>, Tensor<T>> reduce_stats<T>(const Tensor<T>&,                  \
                                                           std::vector<std::size_t>);         \
  template Tensor<T> concat<T>(std::span<const Tensor<T>>, std::size_t);                      \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> bilinear_sample<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                     \
  template Tensor<T> tile_rows<T>(const Tensor<T>&, std::size_t);

PCDNET_INSTANTIATE_OPS(float)
PCDNET_INSTANTIATE_OPS(double)

#undef PCDNET_INSTANTIATE_OPS

}  // namespace pcdnet
