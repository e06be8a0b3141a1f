#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pcdnet/blending.hpp"
#include "pcdnet/camera.hpp"
#include "pcdnet/layers.hpp"

namespace pcdnet {

// Deformation-network families. The GraphX members mix the whole point set;
// the FC members act per point; Up* variants may grow the point count; Slim
// replaces learned mixing with mean aggregation plus scale/shift.
enum class Variant { kFc, kResFc, kGraphX, kResGraphX, kUpResGraphX, kUpResGraphXSlim };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
  EncoderConfig encoder;
  CameraIntrinsics camera;
  Variant variant = Variant::kGraphX;
  std::vector<std::size_t> widths = {96, 64, 48};
  // Per-block point multipliers, consumed only by the Up* variants.
  std::vector<std::size_t> expansion = {1, 1, 2};
  std::size_t n_points = 500;      // training-time initial cloud size
  std::size_t factored_rank = 0;   // 0 = dense shared transform
  BlendMode blend_mode = BlendMode::kFull;

  bool upsampling() const {
    return variant == Variant::kUpResGraphX || variant == Variant::kUpResGraphXSlim;
  }
  void validate() const;
};

struct LayerStat {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

// One stage of the deformation network.
template <typename T>
class DeformBlock {
 public:
  virtual ~DeformBlock() = default;
  virtual Tensor<T> forward(const Tensor<T>& x) const = 0;
  virtual std::size_t out_points(std::size_t n_in) const { return n_in; }
  virtual void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out) = 0;
  virtual void append_stats(std::size_t n_in, const std::string& prefix,
                            std::vector<LayerStat>& out) const = 0;
  virtual void collect_graphx(std::vector<const GraphX<T>*>&) const {}
};

template <typename T>
class PcdNetModel {
 public:
  PcdNetModel(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  std::vector<Tensor<T>> encode_image(const Tensor<T>& img) const;
  std::vector<Tensor<T>> encode_points(const Tensor<T>& cloud) const;
  // Blended per-point features for (image, initial cloud): the latent code.
  Tensor<T> latent(const Tensor<T>& img, const Tensor<T>& cloud,
                   const CameraIntrinsics& cam) const;
  Tensor<T> deform(const Tensor<T>& code) const;
  Tensor<T> forward(const Tensor<T>& img, const Tensor<T>& cloud,
                    const CameraIntrinsics& cam) const;

  // Output cloud size for an n_in-point input cloud.
  std::size_t output_points(std::size_t n_in) const;

  std::vector<NamedParam<T>> named_params();
  void zero_grad();

  const ImageEncoder<T>& image_encoder() const { return image_enc_; }
  const PointMlpEncoder<T>& point_encoder() const { return point_enc_; }
  const std::vector<std::unique_ptr<DeformBlock<T>>>& blocks() const { return blocks_; }
  const Fc<T>& head() const { return head_; }

  // Learned-mixing GraphX layers in network order (for introspection).
  std::vector<const GraphX<T>*> graphx_layers() const;

  std::vector<LayerStat> layer_stats() const;

 private:
  ModelConfig cfg_;
  ImageEncoder<T> image_enc_;
  PointMlpEncoder<T> point_enc_;
  std::vector<std::unique_ptr<DeformBlock<T>>> blocks_;
  Fc<T> head_;  // linear, widths.back() -> 3
};

}  // namespace pcdnet
