#include "pcdnet/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>

#include "pcdnet/ops.hpp"
#include "pcdnet/parallel.hpp"

namespace pcdnet {

NNBackend nn_backend_from_string(const std::string& s) {
  if (s == "brute") return NNBackend::brute_force();
  if (s == "grid") return NNBackend::uniform_grid();
  throw ConfigError("nn backend must be brute|grid, got '" + s + "'");
}

std::string to_string(const NNBackend& b) {
  return b.kind == NNBackend::Kind::kBruteForce ? "brute" : "grid";
}

namespace {

template <typename T>
T sq_dist(const T* a, const T* b) {
  const T d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

template <typename T>
void check_cloud(const Tensor<T>& t, const char* role) {
  if (t.rank() != 2 || t.extent(1) != 3) {
    throw DimensionError(std::string("chamfer: ") + role + " has shape " +
                         shape_str(t.shape()) + ", expected (n,3)");
  }
  if (t.extent(0) == 0) {
    throw DomainError(std::string("chamfer: ") + role + " point set is empty");
  }
}

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint64_t v : {static_cast<std::uint64_t>(k.x), static_cast<std::uint64_t>(k.y),
                            static_cast<std::uint64_t>(k.z)}) {
      h = (h ^ v) * 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

template <typename T>
std::vector<std::size_t> nn_brute(const T* q, std::size_t n, const T* t, std::size_t m) {
  std::vector<std::size_t> out(n);
  parallel_for(
      n,
      [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
          T best = std::numeric_limits<T>::infinity();
          std::size_t best_j = 0;
          for (std::size_t j = 0; j < m; ++j) {
            const T d = sq_dist(q + i * 3, t + j * 3);
            if (d < best) {
              best = d;
              best_j = j;
            }
          }
          out[i] = best_j;
        }
      },
      64);
  return out;
}

template <typename T>
struct UniformGrid {
  double cell = 1.0;
  std::array<double, 3> lo{0, 0, 0};
  std::array<double, 3> hi{0, 0, 0};
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> cells;
  const T* pts = nullptr;

  CellKey key_of(const T* p) const {
    return {static_cast<std::int64_t>(std::floor(static_cast<double>(p[0]) / cell)),
            static_cast<std::int64_t>(std::floor(static_cast<double>(p[1]) / cell)),
            static_cast<std::int64_t>(std::floor(static_cast<double>(p[2]) / cell))};
  }

  void build(const T* t, std::size_t m, double cell_size) {
    pts = t;
    for (std::size_t a = 0; a < 3; ++a) lo[a] = hi[a] = static_cast<double>(t[a]);
    for (std::size_t j = 1; j < m; ++j) {
      for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], static_cast<double>(t[j * 3 + a]));
        hi[a] = std::max(hi[a], static_cast<double>(t[j * 3 + a]));
      }
    }
    cell = cell_size;
    if (cell <= 0) {
      const double dx = hi[0] - lo[0], dy = hi[1] - lo[1], dz = hi[2] - lo[2];
      const double diag = std::sqrt(dx * dx + dy * dy + dz * dz);
      cell = diag > 0 ? diag / 32.0 : 1.0;
    }
    for (std::size_t j = 0; j < m; ++j) {
      cells[key_of(t + j * 3)].push_back(j);  // ascending index order per cell
    }
  }

  // Exact nearest neighbor: scans Chebyshev rings of cells outward and stops
  // once no unvisited cell can hold a strictly closer (or equal-but-lower-
  // index) point. Ring r cells are at least (r-1)*cell away from the query.
  std::size_t query(const T* p) const {
    const CellKey center = key_of(p);
    T best = std::numeric_limits<T>::infinity();
    std::size_t best_j = std::numeric_limits<std::size_t>::max();

    double far2 = 0;  // distance to the farthest corner of the build bbox
    for (std::size_t a = 0; a < 3; ++a) {
      const double d = std::max(std::abs(static_cast<double>(p[a]) - lo[a]),
                                std::abs(static_cast<double>(p[a]) - hi[a]));
      far2 += d * d;
    }
    const std::int64_t max_ring =
        static_cast<std::int64_t>(std::ceil(std::sqrt(far2) / cell)) + 2;

    const auto visit_cell = [&](std::int64_t cx, std::int64_t cy, std::int64_t cz) {
      const auto it = cells.find(CellKey{cx, cy, cz});
      if (it == cells.end()) return;
      for (std::size_t j : it->second) {
        const T d = sq_dist(p, pts + j * 3);
        if (d < best || (d == best && j < best_j)) {
          best = d;
          best_j = j;
        }
      }
    };

    for (std::int64_t r = 0; r <= max_ring; ++r) {
      if (best_j != std::numeric_limits<std::size_t>::max() && r >= 1) {
        const double reach = (static_cast<double>(r) - 1.0) * cell;
        // small slack keeps ties at ring boundaries exact despite fp rounding
        if (reach * reach > static_cast<double>(best) * (1.0 + 1e-6) + 1e-300) break;
      }
      if (r == 0) {
        visit_cell(center.x, center.y, center.z);
        continue;
      }
      for (std::int64_t dz = -r; dz <= r; ++dz) {
        for (std::int64_t dy = -r; dy <= r; ++dy) {
          for (std::int64_t dx = -r; dx <= r; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            visit_cell(center.x + dx, center.y + dy, center.z + dz);
          }
        }
      }
    }
    return best_j;
  }
};

template <typename T>
std::vector<std::size_t> nn_grid(const T* q, std::size_t n, const T* t, std::size_t m,
                                 double cell_size) {
  UniformGrid<T> grid;
  grid.build(t, m, cell_size);
  std::vector<std::size_t> out(n);
  parallel_for(
      n,
      [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) out[i] = grid.query(q + i * 3);
      },
      64);
  return out;
}

}  // namespace

template <typename T>
std::vector<std::size_t> nearest_indices(const Tensor<T>& queries, const Tensor<T>& targets,
                                         const NNBackend& backend) {
  check_cloud(queries, "query");
  check_cloud(targets, "target");
  const T* q = queries.values().data();
  const T* t = targets.values().data();
  if (backend.kind == NNBackend::Kind::kBruteForce) {
    return nn_brute(q, queries.extent(0), t, targets.extent(0));
  }
  return nn_grid(q, queries.extent(0), t, targets.extent(0), backend.cell_size);
}

template <typename T>
Tensor<T> chamfer(const Tensor<T>& x, const Tensor<T>& y, const NNBackend& backend) {
  check_cloud(x, "first");
  check_cloud(y, "second");
  const std::size_t n = x.extent(0), m = y.extent(0);
  const T* px = x.values().data();
  const T* py = y.values().data();

  std::vector<std::size_t> nn_xy = nearest_indices(x, y, backend);
  std::vector<std::size_t> nn_yx = nearest_indices(y, x, backend);

  std::vector<T> dx(n), dy(m);
  for (std::size_t i = 0; i < n; ++i) dx[i] = sq_dist(px + i * 3, py + nn_xy[i] * 3);
  for (std::size_t j = 0; j < m; ++j) dy[j] = sq_dist(py + j * 3, px + nn_yx[j] * 3);

  const T value = canonical_sum(std::span<const T>(dx)) / static_cast<T>(n) +
                  canonical_sum(std::span<const T>(dy)) / static_cast<T>(m);

  auto node = std::make_shared<detail::TensorNode<T>>();
  node->shape = {};
  node->value = {value};
  node->seq = detail::next_seq();

  bool track = grad_enabled() && (x.requires_grad() || y.requires_grad());
  if (track) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents = {x.node(), y.node()};
    node->backward = [n, m, nn_xy = std::move(nn_xy), nn_yx = std::move(nn_yx)](
                         const detail::TensorNode<T>& self, const std::vector<T>& g,
                         detail::AdjointStore<T>& st) {
      const auto& xn = self.parents[0];
      const auto& yn = self.parents[1];
      const T* px = xn->value.data();
      const T* py = yn->value.data();
      const T gn = g[0] * T(2) / static_cast<T>(n);
      const T gm = g[0] * T(2) / static_cast<T>(m);
      T* gx = xn->requires_grad ? st.at(xn.get()).data() : nullptr;
      T* gy = yn->requires_grad ? st.at(yn.get()).data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const T* xi = px + i * 3;
        const T* yj = py + nn_xy[i] * 3;
        for (std::size_t a = 0; a < 3; ++a) {
          const T d = xi[a] - yj[a];
          if (gx) gx[i * 3 + a] += gn * d;
          if (gy) gy[nn_xy[i] * 3 + a] -= gn * d;
        }
      }
      for (std::size_t j = 0; j < m; ++j) {
        const T* yj = py + j * 3;
        const T* xi = px + nn_yx[j] * 3;
        for (std::size_t a = 0; a < 3; ++a) {
          const T d = yj[a] - xi[a];
          if (gy) gy[j * 3 + a] += gm * d;
          if (gx) gx[nn_yx[j] * 3 + a] -= gm * d;
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
double iou_voxel(const Tensor<T>& x, const Tensor<T>& y, std::size_t resolution) {
  check_cloud(x, "first");
  check_cloud(y, "second");
  if (resolution == 0) throw ConfigError("iou_voxel: resolution must be positive");
  const std::size_t r = resolution;

  std::array<double, 3> lo, hi;
  for (std::size_t a = 0; a < 3; ++a) {
    lo[a] = static_cast<double>(x.values()[a]);
    hi[a] = lo[a];
  }
  const auto extend = [&](const Tensor<T>& t) {
    const T* p = t.values().data();
    for (std::size_t i = 0; i < t.extent(0); ++i) {
      for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], static_cast<double>(p[i * 3 + a]));
        hi[a] = std::max(hi[a], static_cast<double>(p[i * 3 + a]));
      }
    }
  };
  extend(x);
  extend(y);
  for (std::size_t a = 0; a < 3; ++a) {
    const double center = 0.5 * (lo[a] + hi[a]);
    const double half = 0.5 * (hi[a] - lo[a]) * 1.02;  // expand the box by 2%
    lo[a] = center - half;
    hi[a] = center + half;
    if (!(hi[a] > lo[a])) {
      throw DomainError("iou_voxel: degenerate zero-volume bounding box on axis " +
                        std::to_string(a));
    }
  }

  const auto voxelize = [&](const Tensor<T>& t, std::vector<std::uint8_t>& occ) {
    const T* p = t.values().data();
    for (std::size_t i = 0; i < t.extent(0); ++i) {
      std::size_t idx = 0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double u = (static_cast<double>(p[i * 3 + a]) - lo[a]) / (hi[a] - lo[a]);
        std::size_t c = static_cast<std::size_t>(std::floor(u * static_cast<double>(r)));
        if (c >= r) c = r - 1;  // max face maps into the last cell
        idx = idx * r + c;
      }
      occ[idx] = 1;
    }
  };

  std::vector<std::uint8_t> occ_x(r * r * r, 0), occ_y(r * r * r, 0);
  voxelize(x, occ_x);
  voxelize(y, occ_y);

  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < occ_x.size(); ++i) {
    inter += occ_x[i] & occ_y[i];
    uni += occ_x[i] | occ_y[i];
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename T>
Tensor<T> l2_penalty(std::span<const Tensor<T>> params, double lambda) {
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  for (const Tensor<T>& p : params) {
    acc = add(acc, sum(mul(p, p)));
  }
  return scale(acc, static_cast<T>(lambda));
}

#define PCDNET_INSTANTIATE_LOSSES(T)                                                       \
  template std::vector<std::size_t> nearest_indices<T>(const Tensor<T>&, const Tensor<T>&, \
                                                       const NNBackend&);                  \
  template Tensor<T> chamfer<T>(const Tensor<T>&, const Tensor<T>&, const NNBackend&);     \
  template double iou_voxel<T>(const Tensor<T>&, const Tensor<T>&, std::size_t);           \
  template Tensor<T> l2_penalty<T>(std::span<const Tensor<T>>, double);

PCDNET_INSTANTIATE_LOSSES(float)
PCDNET_INSTANTIATE_LOSSES(double)

#undef PCDNET_INSTANTIATE_LOSSES

}  // namespace pcdnet
