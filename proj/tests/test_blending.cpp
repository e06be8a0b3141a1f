#include <doctest.h>

#include "pcdnet/blending.hpp"
#include "pcdnet/gradcheck.hpp"
#include "support.hpp"

using namespace pcdnet;
using pcdnet::testing::bit_equal;
using pcdnet::testing::max_abs_diff;
using pcdnet::testing::rand_tensor;

namespace {

const CameraIntrinsics kCam{56.0, 56.0, 32.0, 32.0, 1.0, 3.0};

Tensor<double> rand_cloud(std::size_t n, Rng& rng, double spread = 0.6) {
  std::vector<double> v(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    v[i * 3] = rng.uniform(-spread, spread);
    v[i * 3 + 1] = rng.uniform(-spread, spread);
    v[i * 3 + 2] = rng.uniform(1.3, 2.7);
  }
  return Tensor<double>({n, 3}, std::move(v));
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

TEST_CASE("project_points trivial and oracle cases") {
  SUBCASE("optical axis point lands on the scaled principal point") {
    Tensor<double> cloud({1, 3}, {0.0, 0.0, 2.0});
    auto uv = project_points(cloud, kCam, 16, 16, 64, 64);
    CHECK(uv.at({0, 0}) == doctest::Approx(32.0 * 16 / 64).epsilon(1e-12));
    CHECK(uv.at({0, 1}) == doctest::Approx(32.0 * 16 / 64).epsilon(1e-12));
  }

  SUBCASE("doubling depth halves the offset from the principal point") {
    Tensor<double> near_pt({1, 3}, {0.4, -0.3, 1.2});
    Tensor<double> far_pt({1, 3}, {0.4, -0.3, 2.4});
    auto uv1 = project_points(near_pt, kCam, 64, 64, 64, 64);
    auto uv2 = project_points(far_pt, kCam, 64, 64, 64, 64);
    CHECK(uv2.at({0, 0}) - 32.0 == doctest::Approx((uv1.at({0, 0}) - 32.0) / 2).epsilon(1e-9));
    CHECK(uv2.at({0, 1}) - 32.0 == doctest::Approx((uv1.at({0, 1}) - 32.0) / 2).epsilon(1e-9));
  }

  SUBCASE("random cloud matches the scalar projection formula") {
    Rng rng(211);
    auto cloud = rand_cloud(40, rng);
    auto uv = project_points(cloud, kCam, 16, 8, 64, 64);
    for (std::size_t i = 0; i < 40; ++i) {
      const double x = cloud.at({i, 0}), y = cloud.at({i, 1}), z = cloud.at({i, 2});
      const double u = (kCam.fx * x / z + kCam.cx) * (8.0 / 64.0);
      const double v = (kCam.fy * y / z + kCam.cy) * (16.0 / 64.0);
      CHECK(std::abs(uv.at({i, 0}) - u) < 1e-6);
      CHECK(std::abs(uv.at({i, 1}) - v) < 1e-6);
    }
  }

  SUBCASE("points in front of the near plane are a domain error") {
    Tensor<double> bad({1, 3}, {0.0, 0.0, 0.5});
    CHECK_THROWS_AS(project_points(bad, kCam, 16, 16, 64, 64), DomainError);
  }
}

TEST_CASE("projection_features") {
  Rng rng(223);

  SUBCASE("constant map gives every point the same feature") {
    std::vector<Tensor<double>> pyramid = {Tensor<double>({3, 8, 8}, 0.42)};
    auto cloud = rand_cloud(20, rng);
    auto feats = projection_features(cloud, kCam, std::span<const Tensor<double>>(pyramid),
                                     64, 64);
    REQUIRE(feats.size() == 1);
    for (std::size_t i = 0; i < 20; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(feats[0].at({i, c}) == doctest::Approx(0.42).epsilon(1e-12));
      }
    }
  }

  SUBCASE("row permutation permutes features identically") {
    std::vector<Tensor<double>> pyramid = {rand_tensor<double>({4, 8, 8}, rng)};
    auto cloud = rand_cloud(15, rng);
    auto feats = projection_features(cloud, kCam, std::span<const Tensor<double>>(pyramid),
                                     64, 64);
    auto feats_rev = projection_features(permute_rows_reverse(cloud), kCam,
                                         std::span<const Tensor<double>>(pyramid), 64, 64);
    CHECK(bit_equal(permute_rows_reverse(feats[0]), feats_rev[0]));
  }

  SUBCASE("matches project-then-sample composition") {
    std::vector<Tensor<double>> pyramid = {rand_tensor<double>({4, 16, 16}, rng)};
    auto cloud = rand_cloud(12, rng);
    auto feats = projection_features(cloud, kCam, std::span<const Tensor<double>>(pyramid),
                                     64, 64);
    auto coords = project_points(cloud, kCam, 16, 16, 64, 64);
    auto expect = bilinear_sample(pyramid[0], coords);
    CHECK(max_abs_diff(feats[0], expect) < 1e-12);
  }
}

TEST_CASE("adain statistics transfer") {
  Rng rng(227);

  SUBCASE("constant point features collapse onto the map mean") {
    auto map = rand_tensor<double>({3, 6, 5}, rng);
    Tensor<double> y({10, 3});
    {
      auto v = y.values_mut();
      for (std::size_t i = 0; i < 10; ++i) {
        v[i * 3] = 0.3;
        v[i * 3 + 1] = -1.2;
        v[i * 3 + 2] = 0.0;
      }
    }
    auto out = adain_2d_to_3d(map, y);
    auto stats = reduce_stats(map, {1, 2});
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(out.at({i, c}) == doctest::Approx(stats.first.values()[c]).epsilon(1e-12));
      }
    }
  }

  SUBCASE("constant map scales the normalized features by sqrt(eps)") {
    Tensor<double> map({2, 4, 4}, 1.5);
    auto y = rand_tensor<double>({8, 2}, rng);
    auto out = adain_2d_to_3d(map, y);
    auto ystats = reduce_stats(y, {0});
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        const double normalized =
            (y.at({i, c}) - ystats.first.values()[c]) / ystats.second.values()[c];
        CHECK(out.at({i, c}) ==
              doctest::Approx(1.5 + std::sqrt(kStdEps) * normalized).epsilon(1e-9));
      }
    }
  }

  SUBCASE("output point statistics match the map statistics") {
    for (int round = 0; round < 5; ++round) {
      auto map = rand_tensor<double>({4, 8, 8}, rng);
      auto y = rand_tensor<double>({30, 4}, rng);
      auto out = adain_2d_to_3d(map, y);
      auto map_stats = reduce_stats(map, {1, 2});
      auto out_stats = reduce_stats(out, {0});
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(std::abs(out_stats.first.values()[c] - map_stats.first.values()[c]) < 1e-4);
        CHECK(std::abs(out_stats.second.values()[c] - map_stats.second.values()[c]) < 1e-3);
      }
    }
  }

  SUBCASE("permutation equivariance is exact") {
    auto map = rand_tensor<float>({4, 8, 8}, rng);
    auto y = rand_tensor<float>({25, 4}, rng);
    auto out = adain_2d_to_3d(map, y);
    auto out_rev = adain_2d_to_3d(map, permute_rows_reverse(y));
    CHECK(bit_equal(permute_rows_reverse(out), out_rev));
  }

  SUBCASE("empty point set is a domain error") {
    auto map = rand_tensor<double>({2, 4, 4}, rng);
    Tensor<double> empty({0, 2});
    CHECK_THROWS_AS(adain_2d_to_3d(map, empty), DomainError);
  }
}

TEST_CASE("blend layout and equivariance") {
  Rng rng(229);
  EncoderConfig cfg;
  cfg.channels = {16, 32, 64};
  cfg.image_h = cfg.image_w = 64;

  SUBCASE("desk config width is 2*(16+32+64)+3") {
    CHECK(blended_dim(cfg, BlendMode::kFull) == 227);
    CHECK(blended_dim(cfg, BlendMode::kProjectionOnly) == 115);
    CHECK(blended_dim(cfg, BlendMode::kAdainOnly) == 115);
  }

  std::vector<Tensor<double>> pyramid;
  std::vector<Tensor<double>> mlp;
  const std::size_t n = 14;
  auto cloud = rand_cloud(n, rng);
  std::size_t hw = 32;
  for (std::size_t c : cfg.channels) {
    pyramid.push_back(rand_tensor<double>({c, hw, hw}, rng));
    mlp.push_back(rand_tensor<double>({n, c}, rng));
    hw /= 2;
  }

  auto blended = blend<double>(cloud, kCam, pyramid, mlp, 64, 64, BlendMode::kFull);
  REQUIRE(blended.shape() == Shape{n, 227});

  SUBCASE("slice-back reproduces each feature block exactly") {
    std::size_t offset = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      auto expect = adain_2d_to_3d(pyramid[s], mlp[s]);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < cfg.channels[s]; ++c) {
          CHECK(blended.at({i, offset + c}) == expect.at({i, c}));
        }
      }
      offset += cfg.channels[s];
    }
    auto proj = projection_features<double>(cloud, kCam, pyramid, 64, 64);
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < cfg.channels[s]; ++c) {
          CHECK(blended.at({i, offset + c}) == proj[s].at({i, c}));
        }
      }
      offset += cfg.channels[s];
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < 3; ++d) {
        CHECK(blended.at({i, offset + d}) == cloud.at({i, d}));
      }
    }
  }

  SUBCASE("whole-feature permutation equivariance is exact") {
    auto rev_cloud = permute_rows_reverse(cloud);
    std::vector<Tensor<double>> rev_mlp;
    for (const auto& m : mlp) rev_mlp.push_back(permute_rows_reverse(m));
    auto blended_rev =
        blend<double>(rev_cloud, kCam, pyramid, rev_mlp, 64, 64, BlendMode::kFull);
    CHECK(bit_equal(permute_rows_reverse(blended), blended_rev));
  }

  SUBCASE("gradient w.r.t. cloud coordinates matches finite differences") {
    std::vector<Tensor<double>> small_pyramid = {rand_tensor<double>({4, 16, 16}, rng)};
    std::vector<Tensor<double>> small_mlp = {rand_tensor<double>({8, 4}, rng)};
    auto small_cloud = rand_cloud(8, rng, 0.4);
    auto w = rand_tensor<double>({8, 11}, rng, 0.2, 1.0);
    const double err = max_rel_grad_error(
        [&] {
          auto b = blend<double>(small_cloud, kCam, small_pyramid, small_mlp, 64, 64,
                                 BlendMode::kFull);
          return sum(mul(b, w));
        },
        {small_cloud});
    CHECK(err < 1e-4);
  }
}
