#include "pcdnet/layers.hpp"

#include <cmath>

namespace pcdnet {

template <typename T>
Tensor<T> uniform_param(Shape shape, T bound, Rng& rng) {
  std::vector<T> v(shape_size(shape));
  for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  Tensor<T> t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> kaiming_param(Shape shape, std::size_t fan_in, Rng& rng) {
  const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  return uniform_param<T>(std::move(shape), bound, rng);
}

template <typename T>
Tensor<T> zero_param(Shape shape) {
  Tensor<T> t(std::move(shape), T(0));
  t.set_requires_grad(true);
  return t;
}

// --- Fc -----------------------------------------------------------------------

template <typename T>
Fc<T>::Fc(std::size_t d_in, std::size_t d_out, Activation act, Rng& rng)
    : act(act), d_in(d_in), d_out(d_out) {
  weight = kaiming_param<T>({d_in, d_out}, d_in, rng);
  bias = zero_param<T>({d_out});
}

template <typename T>
Tensor<T> Fc<T>::forward(const Tensor<T>& x) const {
  return activate(add(matmul(x, weight), bias), act);
}

template <typename T>
void Fc<T>::append_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

// --- GraphX -------------------------------------------------------------------

namespace {

template <typename T>
void init_transform(GraphX<T>& g, std::size_t rank_k, Rng& rng) {
  if (rank_k == 0) {
    g.factored = false;
    g.transform = kaiming_param<T>({g.d_in, g.d_out}, g.d_in, rng);
  } else {
    if (rank_k * 2 >= g.d_in) {
      throw ConfigError("GraphX: low-rank k=" + std::to_string(rank_k) +
                        " must satisfy k < d_in/2 with d_in=" + std::to_string(g.d_in));
    }
    g.factored = true;
    g.w1 = kaiming_param<T>({g.d_in, rank_k}, g.d_in, rng);
    g.w2 = kaiming_param<T>({rank_k, g.d_out}, rank_k, rng);
  }
  g.bias = zero_param<T>({g.d_out});
}

}  // namespace

template <typename T>
GraphX<T> GraphX<T>::learned(std::size_t n_in, std::size_t n_out, std::size_t d_in,
                             std::size_t d_out, std::size_t rank_k, Activation act, Rng& rng) {
  GraphX<T> g;
  g.n_in = n_in;
  g.n_out = n_out;
  g.d_in = d_in;
  g.d_out = d_out;
  g.act = act;
  g.mix_kind = MixKind::kLearned;
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(n_in)));
  g.mixing_weight = uniform_param<T>({n_out, n_in}, bound, rng);
  g.mixing_bias = zero_param<T>({n_out});
  init_transform(g, rank_k, rng);
  return g;
}

template <typename T>
GraphX<T> GraphX<T>::slim(std::size_t n_in, std::size_t n_out, std::size_t d_in,
                          std::size_t d_out, std::size_t rank_k, Activation act, Rng& rng) {
  GraphX<T> g;
  g.n_in = n_in;
  g.n_out = n_out;
  g.d_in = d_in;
  g.d_out = d_out;
  g.act = act;
  g.mix_kind = MixKind::kMeanScaleShift;
  g.gain = Tensor<T>::full({d_in}, T(1));
  g.gain.set_requires_grad(true);
  g.shift = zero_param<T>({d_in});
  init_transform(g, rank_k, rng);
  return g;
}

template <typename T>
Tensor<T> GraphX<T>::forward(const Tensor<T>& points_features) const {
  const Tensor<T>& f = points_features;
  if (f.rank() != 2 || f.extent(1) != d_in) {
    throw DimensionError("GraphX: input " + shape_str(f.shape()) + ", expected (n," +
                         std::to_string(d_in) + ")");
  }
  if (mix_kind == MixKind::kLearned && f.extent(0) != n_in) {
    throw DimensionError("GraphX: input has " + std::to_string(f.extent(0)) +
                         " points, mixing expects " + std::to_string(n_in));
  }

  if (mix_kind == MixKind::kLearned) {
    Tensor<T> mixed = matmul(mixing_weight, f);
    mixed = add(mixed, reshape(mixing_bias, {n_out, 1}));
    Tensor<T> y = factored ? matmul(matmul(mixed, w1), w2) : matmul(mixed, transform);
    return activate(add(y, bias), act);
  }

  // Slim path: one row through the transform, replicated afterwards.
  auto [mean, ignored_std] = reduce_stats(f, {0});
  Tensor<T> z = add(mul(mean, gain), shift);
  Tensor<T> row = reshape(z, {1, d_in});
  Tensor<T> y = factored ? matmul(matmul(row, w1), w2) : matmul(row, transform);
  y = activate(add(y, bias), act);
  return tile_rows(reshape(y, {d_out}), n_out);
}

template <typename T>
void GraphX<T>::append_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
  if (mix_kind == MixKind::kLearned) {
    out.push_back({prefix + ".mixing.weight", mixing_weight});
    out.push_back({prefix + ".mixing.bias", mixing_bias});
  } else {
    out.push_back({prefix + ".mixing.gain", gain});
    out.push_back({prefix + ".mixing.shift", shift});
  }
  if (factored) {
    out.push_back({prefix + ".w1", w1});
    out.push_back({prefix + ".w2", w2});
  } else {
    out.push_back({prefix + ".transform", transform});
  }
  out.push_back({prefix + ".bias", bias});
}

// --- ResGraphX ------------------------------------------------------------------

template <typename T>
ResGraphX<T> ResGraphX<T>::make(std::size_t n_in, std::size_t n_out, std::size_t d_in,
                                std::size_t d_out, ResidualKind residual, std::size_t rank_k,
                                bool slim, Rng& rng) {
  if (residual == ResidualKind::kIdentity && (n_out != n_in || d_out != d_in)) {
    throw ConfigError("ResGraphX: identity residual requires unchanged shape, got (" +
                      std::to_string(n_in) + "," + std::to_string(d_in) + ") -> (" +
                      std::to_string(n_out) + "," + std::to_string(d_out) + ")");
  }
  if (residual == ResidualKind::kFc && n_out != n_in) {
    throw ConfigError("ResGraphX: FC residual cannot change the point count " +
                      std::to_string(n_in) + " -> " + std::to_string(n_out));
  }
  ResGraphX<T> block;
  block.residual = residual;
  block.pre = Fc<T>(d_in, d_out, Activation::kRelu, rng);
  block.gx = slim ? GraphX<T>::slim(n_in, n_out, d_out, d_out, rank_k, Activation::kRelu, rng)
                  : GraphX<T>::learned(n_in, n_out, d_out, d_out, rank_k, Activation::kRelu, rng);
  if (residual == ResidualKind::kFc) {
    block.res_fc = Fc<T>(d_in, d_out, Activation::kIdentity, rng);
  } else if (residual == ResidualKind::kGraphX) {
    block.res_gx =
        slim ? GraphX<T>::slim(n_in, n_out, d_in, d_out, rank_k, Activation::kIdentity, rng)
             : GraphX<T>::learned(n_in, n_out, d_in, d_out, rank_k, Activation::kIdentity, rng);
  }
  return block;
}

template <typename T>
Tensor<T> ResGraphX<T>::forward(const Tensor<T>& x) const {
  Tensor<T> main = gx.forward(pre.forward(x));
  switch (residual) {
    case ResidualKind::kIdentity:
      return add(main, x);
    case ResidualKind::kFc:
      return add(main, res_fc.forward(x));
    case ResidualKind::kGraphX:
      return add(main, res_gx.forward(x));
  }
  throw ContractError("ResGraphX: unknown residual kind");
}

template <typename T>
void ResGraphX<T>::append_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
  pre.append_params(prefix + ".pre", out);
  gx.append_params(prefix + ".gx", out);
  if (residual == ResidualKind::kFc) res_fc.append_params(prefix + ".res", out);
  if (residual == ResidualKind::kGraphX) res_gx.append_params(prefix + ".res", out);
}

// --- Conv2dLayer ------------------------------------------------------------------

template <typename T>
Conv2dLayer<T>::Conv2dLayer(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw,
                            std::size_t stride, std::size_t pad, Activation act, Rng& rng)
    : stride(stride), pad(pad), act(act), c_in(c_in), c_out(c_out), kh(kh), kw(kw) {
  kernel = kaiming_param<T>({c_out, c_in, kh, kw}, c_in * kh * kw, rng);
  bias = zero_param<T>({c_out});
}

template <typename T>
Tensor<T> Conv2dLayer<T>::forward(const Tensor<T>& x) const {
  Tensor<T> y = conv2d(x, kernel, stride, pad);
  y = add(y, reshape(bias, {c_out, 1, 1}));
  return activate(y, act);
}

template <typename T>
void Conv2dLayer<T>::append_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
  out.push_back({prefix + ".kernel", kernel});
  out.push_back({prefix + ".bias", bias});
}

// --- encoders ------------------------------------------------------------------

std::pair<std::size_t, std::size_t> EncoderConfig::map_size(std::size_t scale) const {
  std::size_t h = image_h, w = image_w;
  for (std::size_t i = 0; i <= scale; ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return {h, w};
}

void EncoderConfig::validate() const {
  if (channels.empty()) throw ConfigError("encoder: needs at least one scale");
  const std::size_t div = std::size_t{1} << (channels.size() - 1);
  if (image_h % div != 0 || image_w % div != 0) {
    throw ConfigError("encoder: image " + std::to_string(image_h) + "x" +
                      std::to_string(image_w) + " not divisible by 2^(S-1)=" +
                      std::to_string(div));
  }
  for (std::size_t c : channels) {
    if (c == 0) throw ConfigError("encoder: zero-channel scale");
  }
}

template <typename T>
ImageEncoder<T>::ImageEncoder(const EncoderConfig& cfg, Rng& rng, Activation act) : cfg_(cfg) {
  cfg.validate();
  std::size_t prev = 1;  // grayscale input
  for (std::size_t c : cfg.channels) {
    convs_.emplace_back(prev, c, 3, 3, 1, 1, act, rng);
    convs_.emplace_back(c, c, 3, 3, 1, 1, act, rng);
    convs_.emplace_back(c, c, 3, 3, 2, 1, act, rng);  // downsample
    prev = c;
  }
}

template <typename T>
std::vector<Tensor<T>> ImageEncoder<T>::forward(const Tensor<T>& img) const {
  if (img.rank() != 3 || img.extent(0) != 1 || img.extent(1) != cfg_.image_h ||
      img.extent(2) != cfg_.image_w) {
    throw ConfigError("image encoder: input " + shape_str(img.shape()) + ", expected (1," +
                      std::to_string(cfg_.image_h) + "," + std::to_string(cfg_.image_w) + ")");
  }
  std::vector<Tensor<T>> maps;
  Tensor<T> x = img;
  for (std::size_t s = 0; s < cfg_.scales(); ++s) {
    x = convs_[3 * s].forward(x);
    x = convs_[3 * s + 1].forward(x);
    x = convs_[3 * s + 2].forward(x);
    maps.push_back(x);
  }
  return maps;
}

template <typename T>
void ImageEncoder<T>::append_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
  for (std::size_t s = 0; s < cfg_.scales(); ++s) {
    for (std::size_t j = 0; j < 3; ++j) {
      convs_[3 * s + j].append_params(
          prefix + ".s" + std::to_string(s) + ".conv" + std::to_string(j), out);
    }
  }
}

template <typename T>
PointMlpEncoder<T>::PointMlpEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  std::size_t prev = 3;
  for (std::size_t c : cfg.channels) {
    fcs_.emplace_back(prev, c, Activation::kRelu, rng);
    fcs_.emplace_back(c, c, Activation::kRelu, rng);
    prev = c;
  }
}

template <typename T>
std::vector<Tensor<T>> PointMlpEncoder<T>::forward(const Tensor<T>& cloud) const {
  if (cloud.rank() != 2 || cloud.extent(1) != 3) {
    throw DimensionError("point mlp: input " + shape_str(cloud.shape()) + ", expected (n,3)");
  }
  std::vector<Tensor<T>> features;
  Tensor<T> x = cloud;
  for (std::size_t s = 0; s < cfg_.scales(); ++s) {
    x = fcs_[2 * s].forward(x);
    x = fcs_[2 * s + 1].forward(x);
    features.push_back(x);
  }
  return features;
}

template <typename T>
void PointMlpEncoder<T>::append_params(const std::string& prefix,
                                       std::vector<NamedParam<T>>& out) {
  for (std::size_t s = 0; s < cfg_.scales(); ++s) {
    for (std::size_t j = 0; j < 2; ++j) {
      fcs_[2 * s + j].append_params(
          prefix + ".s" + std::to_string(s) + ".fc" + std::to_string(j), out);
    }
  }
}

// --- instantiations ---------------------------------------------------------------

#define PCDNET_INSTANTIATE_LAYERS(T)                                      \
  template Tensor<T> uniform_param<T>(Shape, T, Rng&);                    \
  template Tensor<T> kaiming_param<T>(Shape, std::size_t, Rng&);          \
  template Tensor<T> zero_param<T>(Shape);                                \
  template struct Fc<T>;                                                  \
  template struct GraphX<T>;                                              \
  template struct ResGraphX<T>;                                           \
  template struct Conv2dLayer<T>;                                         \
  template class ImageEncoder<T>;                                         \
  template class PointMlpEncoder<T>;

PCDNET_INSTANTIATE_LAYERS(float)
PCDNET_INSTANTIATE_LAYERS(double)

#undef PCDNET_INSTANTIATE_LAYERS

}  // namespace pcdnet
