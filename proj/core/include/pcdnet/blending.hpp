#pragma once

#include <span>
#include <vector>

#include "pcdnet/camera.hpp"
#include "pcdnet/layers.hpp"
#include "pcdnet/tensor.hpp"

namespace pcdnet {

// Which feature blocks feed the deformation network. Point coordinates are
// always kept: a deformation network without them could not express identity.
enum class BlendMode { kFull, kProjectionOnly, kAdainOnly };

BlendMode blend_mode_from_string(const std::string& s);
std::string to_string(BlendMode m);

// Per-point width of the blended feature for a given encoder geometry.
std::size_t blended_dim(const EncoderConfig& cfg, BlendMode mode);

// Pinhole-projects camera-frame points to continuous feature-map coordinates:
// full-image pixels scaled by (w_i/W, h_i/H). Differentiable w.r.t. the cloud.
// Any point with z < near is a domain error.
template <typename T>
Tensor<T> project_points(const Tensor<T>& cloud, const CameraIntrinsics& cam,
                         std::size_t map_h, std::size_t map_w, std::size_t image_h,
                         std::size_t image_w);

// Bilinear point-specific features at every scale of the pyramid.
template <typename T>
std::vector<Tensor<T>> projection_features(const Tensor<T>& cloud, const CameraIntrinsics& cam,
                                           std::span<const Tensor<T>> pyramid,
                                           std::size_t image_h, std::size_t image_w);

// Renormalizes per-point features to carry the spatial statistics of the
// image map: out_j = std(X) * (y_j - mean(Y)) / std(Y) + mean(X), per channel.
template <typename T>
Tensor<T> adain_2d_to_3d(const Tensor<T>& map, const Tensor<T>& point_features);

// Blended per-point feature rows: [adain scale 1..S | projection scale 1..S | xyz].
// Ablated modes drop one of the two feature families, never the coordinates.
template <typename T>
Tensor<T> blend(const Tensor<T>& cloud, const CameraIntrinsics& cam,
                std::span<const Tensor<T>> pyramid, std::span<const Tensor<T>> mlp_features,
                std::size_t image_h, std::size_t image_w, BlendMode mode = BlendMode::kFull);

}  // namespace pcdnet
