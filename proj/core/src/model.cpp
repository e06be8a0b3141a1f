#include "pcdnet/model.hpp"

namespace pcdnet {

Variant variant_from_string(const std::string& s) {
  if (s == "fc") return Variant::kFc;
  if (s == "resfc") return Variant::kResFc;
  if (s == "graphx") return Variant::kGraphX;
  if (s == "resgraphx") return Variant::kResGraphX;
  if (s == "upresgraphx") return Variant::kUpResGraphX;
  if (s == "upresgraphxslim") return Variant::kUpResGraphXSlim;
  throw ConfigError("unknown variant '" + s +
                    "' (fc|resfc|graphx|resgraphx|upresgraphx|upresgraphxslim)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFc: return "fc";
    case Variant::kResFc: return "resfc";
    case Variant::kGraphX: return "graphx";
    case Variant::kResGraphX: return "resgraphx";
    case Variant::kUpResGraphX: return "upresgraphx";
    case Variant::kUpResGraphXSlim: return "upresgraphxslim";
  }
  return "?";
}

void ModelConfig::validate() const {
  encoder.validate();
  camera.validate();
  if (widths.empty()) throw ConfigError("model: widths must not be empty");
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("model: zero deformation width");
  }
  if (n_points == 0) throw ConfigError("model: n_points must be positive");
  if (upsampling()) {
    if (expansion.size() != widths.size()) {
      throw ConfigError("model: expansion list must match widths (" +
                        std::to_string(expansion.size()) + " vs " +
                        std::to_string(widths.size()) + ")");
    }
    for (std::size_t e : expansion) {
      if (e == 0) throw ConfigError("model: zero expansion ratio");
    }
  }
}

namespace {

// FC stage: per-point fully connected layer, ReLU.
template <typename T>
class FcBlock final : public DeformBlock<T> {
 public:
  FcBlock(std::size_t d_in, std::size_t d_out, Rng& rng)
      : fc_(d_in, d_out, Activation::kRelu, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const override { return fc_.forward(x); }

  void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    fc_.append_params(prefix + ".fc", out);
  }

  void append_stats(std::size_t n_in, const std::string& prefix,
                    std::vector<LayerStat>& out) const override {
    out.push_back({prefix + ".fc", static_cast<std::uint64_t>(fc_.d_in * fc_.d_out + fc_.d_out),
                   static_cast<std::uint64_t>(n_in * fc_.d_in * fc_.d_out)});
  }

 private:
  Fc<T> fc_;
};

// Residual FC stage: relu FC then linear FC on the main branch; identity or
// linear FC residual.
template <typename T>
class ResFcBlock final : public DeformBlock<T> {
 public:
  ResFcBlock(std::size_t d_in, std::size_t d_out, Rng& rng)
      : main0_(d_in, d_out, Activation::kRelu, rng),
        main1_(d_out, d_out, Activation::kIdentity, rng),
        identity_(d_in == d_out) {
    if (!identity_) res_ = Fc<T>(d_in, d_out, Activation::kIdentity, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const override {
    Tensor<T> main = main1_.forward(main0_.forward(x));
    return add(main, identity_ ? x : res_.forward(x));
  }

  void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    main0_.append_params(prefix + ".main0", out);
    main1_.append_params(prefix + ".main1", out);
    if (!identity_) res_.append_params(prefix + ".res", out);
  }

  void append_stats(std::size_t n_in, const std::string& prefix,
                    std::vector<LayerStat>& out) const override {
    const auto fc_stat = [n_in](const Fc<T>& fc, const std::string& name) {
      return LayerStat{name, static_cast<std::uint64_t>(fc.d_in * fc.d_out + fc.d_out),
                       static_cast<std::uint64_t>(n_in * fc.d_in * fc.d_out)};
    };
    out.push_back(fc_stat(main0_, prefix + ".main0"));
    out.push_back(fc_stat(main1_, prefix + ".main1"));
    if (!identity_) out.push_back(fc_stat(res_, prefix + ".res"));
  }

 private:
  Fc<T> main0_, main1_, res_;
  bool identity_;
};

template <typename T>
LayerStat graphx_stat(const GraphX<T>& g, std::size_t n_in, const std::string& name) {
  std::uint64_t params = 0, macs = 0;
  if (g.mix_kind == MixKind::kLearned) {
    params += static_cast<std::uint64_t>(g.n_out) * g.n_in + g.n_out;
    macs += static_cast<std::uint64_t>(g.n_out) * g.n_in * g.d_in;
  } else {
    params += 2 * static_cast<std::uint64_t>(g.d_in);
    macs += static_cast<std::uint64_t>(n_in) * g.d_in + g.d_in;  // mean + scale/shift
  }
  // Rows flowing through the shared transform: every mixed point for learned
  // mixing, a single replicated row for the slim path.
  const std::uint64_t rows = g.mix_kind == MixKind::kLearned ? g.n_out : 1;
  if (g.factored) {
    const std::uint64_t k = g.w1.extent(1);
    params += static_cast<std::uint64_t>(g.d_in) * k + k * g.d_out + g.d_out;
    macs += rows * (static_cast<std::uint64_t>(g.d_in) * k + k * g.d_out);
  } else {
    params += static_cast<std::uint64_t>(g.d_in) * g.d_out + g.d_out;
    macs += rows * static_cast<std::uint64_t>(g.d_in) * g.d_out;
  }
  return {name, params, macs};
}

// GraphX stage (learned mixing, ReLU).
template <typename T>
class GraphXBlock final : public DeformBlock<T> {
 public:
  GraphXBlock(std::size_t n, std::size_t d_in, std::size_t d_out, std::size_t rank_k, Rng& rng)
      : gx_(GraphX<T>::learned(n, n, d_in, d_out, rank_k, Activation::kRelu, rng)) {}

  Tensor<T> forward(const Tensor<T>& x) const override { return gx_.forward(x); }

  void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    gx_.append_params(prefix + ".gx", out);
  }

  void append_stats(std::size_t n_in, const std::string& prefix,
                    std::vector<LayerStat>& out) const override {
    out.push_back(graphx_stat(gx_, n_in, prefix + ".gx"));
  }

  void collect_graphx(std::vector<const GraphX<T>*>& out) const override {
    out.push_back(&gx_);
  }

 private:
  GraphX<T> gx_;
};

// Residual GraphX stage, optionally expanding the point set or using the slim
// mixing in both branches.
template <typename T>
class ResGraphXBlock final : public DeformBlock<T> {
 public:
  ResGraphXBlock(std::size_t n_in, std::size_t n_out, std::size_t d_in, std::size_t d_out,
                 std::size_t rank_k, bool slim, Rng& rng)
      : n_out_(n_out) {
    ResidualKind residual = ResidualKind::kGraphX;
    if (n_out == n_in) {
      residual = d_in == d_out ? ResidualKind::kIdentity : ResidualKind::kFc;
    }
    block_ = ResGraphX<T>::make(n_in, n_out, d_in, d_out, residual, rank_k, slim, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const override { return block_.forward(x); }

  std::size_t out_points(std::size_t) const override { return n_out_; }

  void append_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    block_.append_params(prefix, out);
  }

  void append_stats(std::size_t n_in, const std::string& prefix,
                    std::vector<LayerStat>& out) const override {
    const Fc<T>& pre = block_.pre;
    out.push_back({prefix + ".pre",
                   static_cast<std::uint64_t>(pre.d_in * pre.d_out + pre.d_out),
                   static_cast<std::uint64_t>(n_in * pre.d_in * pre.d_out)});
    out.push_back(graphx_stat(block_.gx, n_in, prefix + ".gx"));
    if (block_.residual == ResidualKind::kFc) {
      const Fc<T>& res = block_.res_fc;
      out.push_back({prefix + ".res",
                     static_cast<std::uint64_t>(res.d_in * res.d_out + res.d_out),
                     static_cast<std::uint64_t>(n_in * res.d_in * res.d_out)});
    } else if (block_.residual == ResidualKind::kGraphX) {
      out.push_back(graphx_stat(block_.res_gx, n_in, prefix + ".res"));
    }
  }

  void collect_graphx(std::vector<const GraphX<T>*>& out) const override {
    if (block_.gx.mix_kind == MixKind::kLearned) out.push_back(&block_.gx);
    if (block_.residual == ResidualKind::kGraphX &&
        block_.res_gx.mix_kind == MixKind::kLearned) {
      out.push_back(&block_.res_gx);
    }
  }

 private:
  ResGraphX<T> block_;
  std::size_t n_out_;
};

}  // namespace

template <typename T>
PcdNetModel<T>::PcdNetModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  image_enc_ = ImageEncoder<T>(cfg.encoder, rng);
  point_enc_ = PointMlpEncoder<T>(cfg.encoder, rng);

  std::size_t d = blended_dim(cfg.encoder, cfg.blend_mode);
  std::size_t n = cfg.n_points;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::size_t d_out = cfg.widths[i];
    switch (cfg.variant) {
      case Variant::kFc:
        blocks_.push_back(std::make_unique<FcBlock<T>>(d, d_out, rng));
        break;
      case Variant::kResFc:
        blocks_.push_back(std::make_unique<ResFcBlock<T>>(d, d_out, rng));
        break;
      case Variant::kGraphX:
        blocks_.push_back(
            std::make_unique<GraphXBlock<T>>(n, d, d_out, cfg.factored_rank, rng));
        break;
      case Variant::kResGraphX:
        blocks_.push_back(std::make_unique<ResGraphXBlock<T>>(n, n, d, d_out,
                                                              cfg.factored_rank, false, rng));
        break;
      case Variant::kUpResGraphX:
      case Variant::kUpResGraphXSlim: {
        const std::size_t n_out = n * cfg.expansion[i];
        blocks_.push_back(std::make_unique<ResGraphXBlock<T>>(
            n, n_out, d, d_out, cfg.factored_rank,
            cfg.variant == Variant::kUpResGraphXSlim, rng));
        n = n_out;
        break;
      }
    }
    d = d_out;
  }
  head_ = Fc<T>(cfg.widths.back(), 3, Activation::kIdentity, rng);
}

template <typename T>
std::vector<Tensor<T>> PcdNetModel<T>::encode_image(const Tensor<T>& img) const {
  return image_enc_.forward(img);
}

template <typename T>
std::vector<Tensor<T>> PcdNetModel<T>::encode_points(const Tensor<T>& cloud) const {
  return point_enc_.forward(cloud);
}

template <typename T>
Tensor<T> PcdNetModel<T>::latent(const Tensor<T>& img, const Tensor<T>& cloud,
                                 const CameraIntrinsics& cam) const {
  const auto pyramid = encode_image(img);
  const auto mlp = encode_points(cloud);
  return blend<T>(cloud, cam, pyramid, mlp, cfg_.encoder.image_h, cfg_.encoder.image_w,
                  cfg_.blend_mode);
}

template <typename T>
Tensor<T> PcdNetModel<T>::deform(const Tensor<T>& code) const {
  Tensor<T> x = code;
  for (const auto& block : blocks_) x = block->forward(x);
  return head_.forward(x);
}

template <typename T>
Tensor<T> PcdNetModel<T>::forward(const Tensor<T>& img, const Tensor<T>& cloud,
                                  const CameraIntrinsics& cam) const {
  return deform(latent(img, cloud, cam));
}

template <typename T>
std::size_t PcdNetModel<T>::output_points(std::size_t n_in) const {
  std::size_t n = n_in;
  for (const auto& block : blocks_) n = block->out_points(n);
  return n;
}

template <typename T>
std::vector<NamedParam<T>> PcdNetModel<T>::named_params() {
  std::vector<NamedParam<T>> out;
  image_enc_.append_params("encoder", out);
  point_enc_.append_params("mlp", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i]->append_params("deform.b" + std::to_string(i), out);
  }
  head_.append_params("head", out);
  return out;
}

template <typename T>
void PcdNetModel<T>::zero_grad() {
  for (auto& p : named_params()) p.tensor.zero_grad();
}

template <typename T>
std::vector<const GraphX<T>*> PcdNetModel<T>::graphx_layers() const {
  std::vector<const GraphX<T>*> out;
  for (const auto& block : blocks_) block->collect_graphx(out);
  return out;
}

template <typename T>
std::vector<LayerStat> PcdNetModel<T>::layer_stats() const {
  std::vector<LayerStat> out;
  // Encoder convs: spatial sizes follow the conv chain from the image size.
  std::size_t h = cfg_.encoder.image_h, w = cfg_.encoder.image_w;
  const auto& convs = image_enc_.layers();
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto& c = convs[i];
    const std::size_t ho = (h + 2 * c.pad - c.kh) / c.stride + 1;
    const std::size_t wo = (w + 2 * c.pad - c.kw) / c.stride + 1;
    out.push_back({"encoder.s" + std::to_string(i / 3) + ".conv" + std::to_string(i % 3),
                   static_cast<std::uint64_t>(c.c_out * c.c_in * c.kh * c.kw + c.c_out),
                   static_cast<std::uint64_t>(c.c_out * c.c_in * c.kh * c.kw) * ho * wo});
    h = ho;
    w = wo;
  }
  const std::size_t n_cloud = cfg_.n_points;
  const auto& fcs = point_enc_.layers();
  for (std::size_t i = 0; i < fcs.size(); ++i) {
    const auto& f = fcs[i];
    out.push_back({"mlp.s" + std::to_string(i / 2) + ".fc" + std::to_string(i % 2),
                   static_cast<std::uint64_t>(f.d_in * f.d_out + f.d_out),
                   static_cast<std::uint64_t>(n_cloud * f.d_in * f.d_out)});
  }
  std::size_t n = cfg_.n_points;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i]->append_stats(n, "deform.b" + std::to_string(i), out);
    n = blocks_[i]->out_points(n);
  }
  out.push_back({"head",
                 static_cast<std::uint64_t>(head_.d_in * head_.d_out + head_.d_out),
                 static_cast<std::uint64_t>(n * head_.d_in * head_.d_out)});
  return out;
}

template class PcdNetModel<float>;
template class PcdNetModel<double>;

}  // namespace pcdnet
