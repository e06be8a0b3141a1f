#include <doctest.h>

#include <unordered_set>

#include "oracles.hpp"
#include "pcdnet/gradcheck.hpp"
#include "pcdnet/losses.hpp"
#include "support.hpp"

using namespace pcdnet;
using pcdnet::testing::chamfer_oracle;
using pcdnet::testing::rand_tensor;

namespace {

template <typename T>
Tensor<T> rand_cloud(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return rand_tensor<T>({n, 3}, rng, lo, hi);
}

template <typename T>
Tensor<T> permute_rows_reverse(const Tensor<T>& t) {
  const std::size_t n = t.extent(0), d = t.extent(1);
  std::vector<T> v(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] = t.at({n - 1 - i, j});
  }
  return Tensor<T>({n, d}, std::move(v));
}

}  // namespace

TEST_CASE("chamfer trivial cases") {
  Rng rng(301);
  auto x = rand_cloud<double>(10, rng);
  CHECK(chamfer(x, x, NNBackend::brute_force()).item() == 0.0);

  Tensor<double> a({1, 3}, {0, 0, 0});
  Tensor<double> b({1, 3}, {1, 0, 0});
  CHECK(chamfer(a, b, NNBackend::brute_force()).item() == doctest::Approx(2.0));

  Tensor<double> empty({0, 3});
  CHECK_THROWS_AS(chamfer(empty, a), DomainError);
}

TEST_CASE("chamfer matches the O(NM) oracle and the grid backend") {
  Rng rng(307);
  for (int round = 0; round < 10; ++round) {
    const std::size_t n = 20 + rng.index(60);
    const std::size_t m = 20 + rng.index(60);
    auto x = rand_cloud<float>(n, rng);
    auto y = rand_cloud<float>(m, rng);
    const double brute = chamfer(x, y, NNBackend::brute_force()).item();
    const double grid = chamfer(x, y, NNBackend::uniform_grid()).item();
    CHECK(std::abs(brute - chamfer_oracle(x, y)) < 1e-5);
    CHECK(std::abs(brute - grid) < 1e-6);
  }
}

TEST_CASE("chamfer invariances") {
  Rng rng(311);
  auto x = rand_cloud<float>(24, rng);
  auto y = rand_cloud<float>(31, rng);

  SUBCASE("symmetry is exact") {
    CHECK(chamfer(x, y).item() == chamfer(y, x).item());
  }

  SUBCASE("permutation invariance is exact") {
    const float v = chamfer(x, y).item();
    CHECK(chamfer(permute_rows_reverse(x), y).item() == v);
    CHECK(chamfer(x, permute_rows_reverse(y)).item() == v);
  }

  SUBCASE("joint translation invariance within 1e-6") {
    const auto shift = [](const Tensor<float>& t, float dx, float dy, float dz) {
      std::vector<float> v(t.values().begin(), t.values().end());
      for (std::size_t i = 0; i < t.extent(0); ++i) {
        v[i * 3] += dx;
        v[i * 3 + 1] += dy;
        v[i * 3 + 2] += dz;
      }
      return Tensor<float>(t.shape(), std::move(v));
    };
    const double v0 = chamfer(x, y).item();
    const double v1 = chamfer(shift(x, 0.3f, -0.2f, 0.5f), shift(y, 0.3f, -0.2f, 0.5f)).item();
    CHECK(std::abs(v0 - v1) < 1e-6);
  }

  SUBCASE("nonnegative, zero only on mutual coincidence") {
    CHECK(chamfer(x, y).item() > 0.0f);
    // Every point of each set coincides with a point of the other.
    Tensor<float> a({3, 3}, {0, 0, 0, 1, 1, 1, 2, 2, 2});
    Tensor<float> b({2, 3}, {2, 2, 2, 0, 0, 0});
    CHECK(chamfer(a, b).item() > 0.0f);  // (1,1,1) has no twin
    Tensor<float> c({2, 3}, {0, 0, 0, 2, 2, 2});
    Tensor<float> d({3, 3}, {2, 2, 2, 0, 0, 0, 0, 0, 0});
    CHECK(chamfer(c, d).item() == 0.0f);
  }
}

TEST_CASE("nearest neighbor backends agree including ties") {
  // Exact tie: two target points equidistant; lowest index must win in both.
  Tensor<double> targets({3, 3}, {1, 0, 0, -1, 0, 0, 5, 5, 5});
  Tensor<double> query({1, 3}, {0, 0, 0});
  const auto brute = nearest_indices(query, targets, NNBackend::brute_force());
  const auto grid = nearest_indices(query, targets, NNBackend::uniform_grid(0.37));
  CHECK(brute[0] == 0);
  CHECK(grid[0] == 0);

  Rng rng(313);
  for (int round = 0; round < 20; ++round) {
    auto x = rand_tensor<double>({30, 3}, rng, -2, 2);
    auto y = rand_tensor<double>({40, 3}, rng, -2, 2);
    CHECK(nearest_indices(x, y, NNBackend::brute_force()) ==
          nearest_indices(x, y, NNBackend::uniform_grid()));
    // Odd cell sizes should not change the result.
    CHECK(nearest_indices(x, y, NNBackend::brute_force()) ==
          nearest_indices(x, y, NNBackend::uniform_grid(0.713)));
  }
}

TEST_CASE("chamfer gradient matches finite differences away from ties") {
  Rng rng(317);
  auto x = rand_cloud<double>(15, rng);
  auto y = rand_cloud<double>(20, rng);
  const double err =
      max_rel_grad_error([&] { return chamfer(x, y, NNBackend::uniform_grid()); }, {x, y});
  CHECK(err < 1e-4);
}

TEST_CASE("iou_voxel") {
  Rng rng(331);

  SUBCASE("identical clouds give 1, disjoint cells give 0") {
    auto x = rand_cloud<float>(50, rng);
    CHECK(iou_voxel(x, x) == 1.0);
    Tensor<float> a({2, 3}, {0, 0, 0, 0.1f, 0.1f, 0.1f});
    Tensor<float> b({2, 3}, {9, 9, 9, 9.1f, 9.1f, 9.1f});
    CHECK(iou_voxel(a, b) == 0.0);
  }

  SUBCASE("matches a hash-set voxelization oracle exactly") {
    for (int round = 0; round < 5; ++round) {
      auto x = rand_cloud<float>(80, rng);
      auto y = rand_cloud<float>(60, rng);
      // Oracle: same normalization contract, independent hash-set accounting.
      double lo[3], hi[3];
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::numeric_limits<double>::infinity();
        hi[a] = -std::numeric_limits<double>::infinity();
      }
      const auto extend = [&](const Tensor<float>& t) {
        for (std::size_t i = 0; i < t.extent(0); ++i) {
          for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], static_cast<double>(t.at({i, static_cast<std::size_t>(a)})));
            hi[a] = std::max(hi[a], static_cast<double>(t.at({i, static_cast<std::size_t>(a)})));
          }
        }
      };
      extend(x);
      extend(y);
      for (int a = 0; a < 3; ++a) {
        const double c = 0.5 * (lo[a] + hi[a]), h = 0.5 * (hi[a] - lo[a]) * 1.02;
        lo[a] = c - h;
        hi[a] = c + h;
      }
      const auto cells = [&](const Tensor<float>& t) {
        std::unordered_set<std::int64_t> s;
        for (std::size_t i = 0; i < t.extent(0); ++i) {
          std::int64_t key = 0;
          for (int a = 0; a < 3; ++a) {
            const double u =
                (t.at({i, static_cast<std::size_t>(a)}) - lo[a]) / (hi[a] - lo[a]);
            std::int64_t c = static_cast<std::int64_t>(std::floor(u * 32));
            c = std::min<std::int64_t>(c, 31);
            key = key * 32 + c;
          }
          s.insert(key);
        }
        return s;
      };
      const auto sx = cells(x), sy = cells(y);
      std::size_t inter = 0;
      for (auto k : sx) inter += sy.count(k);
      const double expect = static_cast<double>(inter) /
                            static_cast<double>(sx.size() + sy.size() - inter);
      CHECK(iou_voxel(x, y) == expect);
    }
  }

  SUBCASE("symmetry") {
    auto x = rand_cloud<float>(40, rng);
    auto y = rand_cloud<float>(30, rng);
    CHECK(iou_voxel(x, y) == iou_voxel(y, x));
  }

  SUBCASE("degenerate bounding box is a domain error") {
    Tensor<float> flat({3, 3}, {0, 0, 1, 1, 0, 1, 0, 1, 1});  // z identical
    CHECK_THROWS_AS(iou_voxel(flat, flat), DomainError);
  }
}

TEST_CASE("l2 penalty") {
  SUBCASE("zero parameters give zero") {
    std::vector<Tensor<double>> params = {Tensor<double>({4, 4}, 0.0)};
    CHECK(l2_penalty(std::span<const Tensor<double>>(params)).item() == 0.0);
  }

  SUBCASE("single weight gives lambda w^2 with gradient 2 lambda w") {
    Tensor<double> w({1}, {0.7});
    w.set_requires_grad(true);
    std::vector<Tensor<double>> params = {w};
    auto loss = l2_penalty(std::span<const Tensor<double>>(params), 1e-5);
    CHECK(loss.item() == doctest::Approx(1e-5 * 0.49).epsilon(1e-12));
    backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(2 * 1e-5 * 0.7).epsilon(1e-12));
  }

  SUBCASE("random parameters match the summation oracle") {
    Rng rng(337);
    auto a = rand_tensor<double>({5, 3}, rng);
    auto b = rand_tensor<double>({11}, rng);
    std::vector<Tensor<double>> params = {a, b};
    double expect = 0;
    for (double v : a.values()) expect += v * v;
    for (double v : b.values()) expect += v * v;
    expect *= 1e-5;
    CHECK(std::abs(l2_penalty(std::span<const Tensor<double>>(params), 1e-5).item() - expect) <
          1e-8);
  }
}
