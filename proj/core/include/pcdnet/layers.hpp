#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pcdnet/ops.hpp"
#include "pcdnet/rng.hpp"
#include "pcdnet/tensor.hpp"

namespace pcdnet {

enum class Activation { kIdentity, kRelu };

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  return act == Activation::kRelu ? relu(x) : x;
}

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// i.i.d. uniform(-bound, bound) parameter tensor, marked trainable.
template <typename T>
Tensor<T> uniform_param(Shape shape, T bound, Rng& rng);

// Kaiming-uniform fan-in init: bound = sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_param(Shape shape, std::size_t fan_in, Rng& rng);

template <typename T>
Tensor<T> zero_param(Shape shape);

// Fully connected layer on row-per-point inputs: y = act(x W + b).
template <typename T>
struct Fc {
  Tensor<T> weight;  // [d_in, d_out]
  Tensor<T> bias;    // [d_out]
  Activation act = Activation::kIdentity;
  std::size_t d_in = 0, d_out = 0;

  Fc() = default;
  Fc(std::size_t d_in, std::size_t d_out, Activation act, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out);
};

// How a GraphX layer couples the points of the input set.
//   kLearned:        n_k = sum_i w_ik f_i + b_k          (a full mixing matrix)
//   kMeanScaleShift: n_k = gain * mean_i(f_i) + shift    (the slim hypothesis)
enum class MixKind { kLearned, kMeanScaleShift };

// Set-to-set layer: mixes the whole input point set into n_out new points,
// then applies a shared affine map and optional activation to each point.
// The shared transform is either a dense [d_in, d_out] matrix or a low-rank
// pair [d_in, k][k, d_out]; the factored product is never materialized.
template <typename T>
struct GraphX {
  std::size_t n_in = 0, n_out = 0, d_in = 0, d_out = 0;
  MixKind mix_kind = MixKind::kLearned;

  Tensor<T> mixing_weight;  // [n_out, n_in]   (kLearned)
  Tensor<T> mixing_bias;    // [n_out], scalar per output point, broadcast over d_in
  Tensor<T> gain, shift;    // [d_in]          (kMeanScaleShift)

  bool factored = false;
  Tensor<T> transform;  // [d_in, d_out] when dense
  Tensor<T> w1, w2;     // [d_in, k], [k, d_out] when factored
  Tensor<T> bias;       // [d_out]
  Activation act = Activation::kIdentity;

  // rank_k == 0 selects the dense transform; otherwise requires rank_k < d_in / 2.
  static GraphX learned(std::size_t n_in, std::size_t n_out, std::size_t d_in,
                        std::size_t d_out, std::size_t rank_k, Activation act, Rng& rng);
  static GraphX slim(std::size_t n_in, std::size_t n_out, std::size_t d_in, std::size_t d_out,
                     std::size_t rank_k, Activation act, Rng& rng);

  Tensor<T> forward(const Tensor<T>& points_features) const;
  void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out);
};

enum class ResidualKind { kIdentity, kFc, kGraphX };

// Residual set block: out = gx(fc_relu(x)) + residual(x). The residual is the
// identity when neither the width nor the point count changes, an FC when only
// the width changes, and a (linear) GraphX when the point count changes.
template <typename T>
struct ResGraphX {
  Fc<T> pre;     // relu
  GraphX<T> gx;  // relu
  ResidualKind residual = ResidualKind::kIdentity;
  Fc<T> res_fc;      // linear, when residual == kFc
  GraphX<T> res_gx;  // linear, when residual == kGraphX

  static ResGraphX make(std::size_t n_in, std::size_t n_out, std::size_t d_in,
                        std::size_t d_out, ResidualKind residual, std::size_t rank_k, bool slim,
                        Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out);
};

// Single conv + bias + activation.
template <typename T>
struct Conv2dLayer {
  Tensor<T> kernel;  // [c_out, c_in, kh, kw]
  Tensor<T> bias;    // [c_out]
  std::size_t stride = 1, pad = 1;
  Activation act = Activation::kRelu;
  std::size_t c_in = 0, c_out = 0, kh = 0, kw = 0;

  Conv2dLayer() = default;
  Conv2dLayer(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw,
              std::size_t stride, std::size_t pad, Activation act, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out);
};

// Multi-scale feature geometry shared by the image and point encoders: the
// point-feature width at scale i always equals the image channel count c_i.
struct EncoderConfig {
  std::vector<std::size_t> channels = {16, 32, 64};
  std::size_t image_h = 64, image_w = 64;

  std::size_t scales() const { return channels.size(); }
  // Spatial size of the scale-i feature map (each scale halves, rounding up).
  std::pair<std::size_t, std::size_t> map_size(std::size_t scale) const;
  void validate() const;
};

// Feed-forward CNN (no skip connections): per scale two 3x3 convs plus a
// stride-2 3x3 conv for downsampling, all ReLU. Emits one map per scale.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const EncoderConfig& cfg, Rng& rng, Activation act = Activation::kRelu);

  std::vector<Tensor<T>> forward(const Tensor<T>& img) const;
  void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out);
  const std::vector<Conv2dLayer<T>>& layers() const { return convs_; }
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<Conv2dLayer<T>> convs_;
};

// Shared-weight MLP over individual points; block i emits the scale-i feature
// set of width channels[i]. Permutation-equivariant by construction.
template <typename T>
class PointMlpEncoder {
 public:
  PointMlpEncoder() = default;
  PointMlpEncoder(const EncoderConfig& cfg, Rng& rng);

  std::vector<Tensor<T>> forward(const Tensor<T>& cloud) const;
  void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out);
  const std::vector<Fc<T>>& layers() const { return fcs_; }

 private:
  EncoderConfig cfg_;
  std::vector<Fc<T>> fcs_;  // two per scale
};

}  // namespace pcdnet
