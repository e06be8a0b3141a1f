#include "pcdnet/blending.hpp"

#include <cmath>

namespace pcdnet {

BlendMode blend_mode_from_string(const std::string& s) {
  if (s == "full") return BlendMode::kFull;
  if (s == "projection") return BlendMode::kProjectionOnly;
  if (s == "adain") return BlendMode::kAdainOnly;
  throw ConfigError("blend mode must be one of full|projection|adain, got '" + s + "'");
}

std::string to_string(BlendMode m) {
  switch (m) {
    case BlendMode::kFull:
      return "full";
    case BlendMode::kProjectionOnly:
      return "projection";
    case BlendMode::kAdainOnly:
      return "adain";
  }
  return "?";
}

std::size_t blended_dim(const EncoderConfig& cfg, BlendMode mode) {
  std::size_t sum = 0;
  for (std::size_t c : cfg.channels) sum += c;
  return (mode == BlendMode::kFull ? 2 * sum : sum) + 3;
}

template <typename T>
Tensor<T> project_points(const Tensor<T>& cloud, const CameraIntrinsics& cam, std::size_t map_h,
                         std::size_t map_w, std::size_t image_h, std::size_t image_w) {
  if (cloud.rank() != 2 || cloud.extent(1) != 3) {
    throw DimensionError("project_points: cloud " + shape_str(cloud.shape()) +
                         ", expected (n,3)");
  }
  const std::size_t n = cloud.extent(0);
  const T su = static_cast<T>(static_cast<double>(map_w) / static_cast<double>(image_w));
  const T sv = static_cast<T>(static_cast<double>(map_h) / static_cast<double>(image_h));
  const T fx = static_cast<T>(cam.fx), fy = static_cast<T>(cam.fy);
  const T cx = static_cast<T>(cam.cx), cy = static_cast<T>(cam.cy);
  const T near_z = static_cast<T>(cam.near_z);

  const T* p = cloud.values().data();
  std::vector<T> out(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = p[i * 3], y = p[i * 3 + 1], z = p[i * 3 + 2];
    if (z < near_z) {
      throw DomainError("project_points: point " + std::to_string(i) + " has depth " +
                        std::to_string(static_cast<double>(z)) + " < near " +
                        std::to_string(cam.near_z));
    }
    out[i * 2] = (fx * x / z + cx) * su;
    out[i * 2 + 1] = (fy * y / z + cy) * sv;
  }

  auto node = std::make_shared<detail::TensorNode<T>>();
  node->shape = {n, 2};
  node->value = std::move(out);
  node->seq = detail::next_seq();
  if (grad_enabled() && cloud.requires_grad()) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents = {cloud.node()};
    node->backward = [n, su, sv, fx, fy](const detail::TensorNode<T>& self,
                                         const std::vector<T>& g, detail::AdjointStore<T>& st) {
      const auto& cn = self.parents[0];
      if (!cn->requires_grad) return;
      const T* p = cn->value.data();
      std::vector<T>& gc = st.at(cn.get());
      for (std::size_t i = 0; i < n; ++i) {
        const T x = p[i * 3], y = p[i * 3 + 1], z = p[i * 3 + 2];
        const T gu = g[i * 2], gv = g[i * 2 + 1];
        gc[i * 3] += gu * su * fx / z;
        gc[i * 3 + 1] += gv * sv * fy / z;
        gc[i * 3 + 2] += -(gu * su * fx * x + gv * sv * fy * y) / (z * z);
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
std::vector<Tensor<T>> projection_features(const Tensor<T>& cloud, const CameraIntrinsics& cam,
                                           std::span<const Tensor<T>> pyramid,
                                           std::size_t image_h, std::size_t image_w) {
  std::vector<Tensor<T>> features;
  features.reserve(pyramid.size());
  for (const Tensor<T>& map : pyramid) {
    if (map.rank() != 3) {
      throw DimensionError("projection_features: map " + shape_str(map.shape()) +
                           ", expected (c,h,w)");
    }
    Tensor<T> coords =
        project_points(cloud, cam, map.extent(1), map.extent(2), image_h, image_w);
    features.push_back(bilinear_sample(map, coords));
  }
  return features;
}

template <typename T>
Tensor<T> adain_2d_to_3d(const Tensor<T>& map, const Tensor<T>& point_features) {
  if (map.rank() != 3 || point_features.rank() != 2 ||
      map.extent(0) != point_features.extent(1)) {
    throw DimensionError("adain: map " + shape_str(map.shape()) + " vs point features " +
                         shape_str(point_features.shape()));
  }
  if (point_features.extent(0) == 0) {
    throw DomainError("adain: empty point set");
  }
  auto map_stats = reduce_stats(map, {1, 2});          // over spatial locations -> (c)
  auto point_stats = reduce_stats(point_features, {0});  // over the point set  -> (c)
  Tensor<T> centered = sub(point_features, point_stats.first);
  Tensor<T> normalized = div(centered, point_stats.second);
  return add(mul(normalized, map_stats.second), map_stats.first);
}

template <typename T>
Tensor<T> blend(const Tensor<T>& cloud, const CameraIntrinsics& cam,
                std::span<const Tensor<T>> pyramid, std::span<const Tensor<T>> mlp_features,
                std::size_t image_h, std::size_t image_w, BlendMode mode) {
  if (pyramid.size() != mlp_features.size()) {
    throw DimensionError("blend: " + std::to_string(pyramid.size()) + " maps vs " +
                         std::to_string(mlp_features.size()) + " point feature sets");
  }
  std::vector<Tensor<T>> blocks;
  if (mode != BlendMode::kProjectionOnly) {
    for (std::size_t s = 0; s < pyramid.size(); ++s) {
      blocks.push_back(adain_2d_to_3d(pyramid[s], mlp_features[s]));
    }
  }
  if (mode != BlendMode::kAdainOnly) {
    auto proj = projection_features(cloud, cam, pyramid, image_h, image_w);
    for (auto& t : proj) blocks.push_back(std::move(t));
  }
  blocks.push_back(cloud);
  return concat(std::span<const Tensor<T>>(blocks), 1);
}

#define PCDNET_INSTANTIATE_BLEND(T)                                                        \
  template Tensor<T> project_points<T>(const Tensor<T>&, const CameraIntrinsics&,          \
                                       std::size_t, std::size_t, std::size_t, std::size_t); \
  template std::vector<Tensor<T>> projection_features<T>(                                  \
      const Tensor<T>&, const CameraIntrinsics&, std::span<const Tensor<T>>, std::size_t, \
      std::size_t);                                                                        \
  template Tensor<T> adain_2d_to_3d<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> blend<T>(const Tensor<T>&, const CameraIntrinsics&,                   \
                              std::span<const Tensor<T>>, std::span<const Tensor<T>>,      \
                              std::size_t, std::size_t, BlendMode);

PCDNET_INSTANTIATE_BLEND(float)
PCDNET_INSTANTIATE_BLEND(double)

#undef PCDNET_INSTANTIATE_BLEND

}  // namespace pcdnet
