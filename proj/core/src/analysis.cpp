#include "pcdnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace pcdnet {

template <typename T>
InterpolationResult<T> interpolate_latents(const PcdNetModel<T>& model,
                                           const std::array<Tensor<T>, 4>& images,
                                           const CameraIntrinsics& cam,
                                           const Tensor<T>& fixed_cloud) {
  NoGradGuard guard;
  std::array<Tensor<T>, 4> codes;
  for (std::size_t k = 0; k < 4; ++k) {
    codes[k] = model.latent(images[k], fixed_cloud, cam);
    if (codes[k].shape() != codes[0].shape()) {
      throw ContractError("interpolate_latents: corner codes disagree in shape (" +
                          shape_str(codes[k].shape()) + " vs " + shape_str(codes[0].shape()) +
                          ")");
    }
  }

  InterpolationResult<T> result;
  const std::size_t g = result.grid;
  result.clouds.reserve(g * g);
  const std::size_t n = codes[0].size();
  for (std::size_t i = 0; i < g; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(g - 1);
    for (std::size_t j = 0; j < g; ++j) {
      const double t = static_cast<double>(j) / static_cast<double>(g - 1);
      Tensor<T> code;
      if ((i == 0 || i == g - 1) && (j == 0 || j == g - 1)) {
        // Exact corner: reuse the corner code itself.
        const std::size_t k = (i == 0 ? 0 : 2) + (j == 0 ? 0 : 1);
        code = codes[k];
      } else {
        const T w00 = static_cast<T>((1 - s) * (1 - t));
        const T w01 = static_cast<T>((1 - s) * t);
        const T w10 = static_cast<T>(s * (1 - t));
        const T w11 = static_cast<T>(s * t);
        std::vector<T> mix(n);
        const T* c0 = codes[0].values().data();
        const T* c1 = codes[1].values().data();
        const T* c2 = codes[2].values().data();
        const T* c3 = codes[3].values().data();
        for (std::size_t e = 0; e < n; ++e) {
          mix[e] = w00 * c0[e] + w01 * c1[e] + w10 * c2[e] + w11 * c3[e];
        }
        code = Tensor<T>(codes[0].shape(), std::move(mix));
      }
      result.clouds.push_back(model.deform(code));
    }
  }
  return result;
}

// One-sided Jacobi: orthogonalizes the columns of a copy of A; the singular
// values are the final column norms.
std::vector<double> singular_values(const std::vector<double>& a, std::size_t rows,
                                    std::size_t cols) {
  if (a.size() != rows * cols) {
    throw DimensionError("singular_values: matrix buffer size mismatch");
  }
  // Work on the tall orientation so the columns being rotated are as few as
  // possible.
  std::size_t m = rows, n = cols;
  std::vector<double> w;
  if (rows >= cols) {
    w = a;
  } else {
    m = cols;
    n = rows;
    w.resize(a.size());
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) w[j * n + i] = a[i * cols + j];
    }
  }
  const auto col_dot = [&](std::size_t p, std::size_t q) {
    double acc = 0;
    for (std::size_t i = 0; i < m; ++i) acc += w[i * n + p] * w[i * n + q];
    return acc;
  };

  const double eps = 1e-12;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double app = col_dot(p, p);
        const double aqq = col_dot(q, q);
        const double apq = col_dot(p, q);
        if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0) continue;
        off = std::max(off, std::abs(apq) / std::sqrt(std::max(app * aqq, 1e-300)));
        const double tau = (aqq - app) / (2 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1 + tau * tau));
        const double c = 1 / std::sqrt(1 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w[i * n + p], wq = w[i * n + q];
          w[i * n + p] = c * wp - s * wq;
          w[i * n + q] = s * wp + c * wq;
        }
      }
    }
    if (off < 1e-12) break;
  }

  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) sv[j] = std::sqrt(std::max(0.0, col_dot(j, j)));
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

template <typename T>
MixingReport<T> inspect_mixing(const GraphX<T>& layer) {
  if (layer.mix_kind != MixKind::kLearned) {
    throw ConfigError("inspect_mixing: layer has no mixing matrix (slim mixing)");
  }
  MixingReport<T> report;
  report.matrix = layer.mixing_weight.clone();
  const std::size_t n_out = layer.n_out, n_in = layer.n_in;
  const T* w = report.matrix.values().data();
  report.row_mean.resize(n_out);
  report.row_variance.resize(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    double mean = 0;
    for (std::size_t j = 0; j < n_in; ++j) mean += static_cast<double>(w[i * n_in + j]);
    mean /= static_cast<double>(n_in);
    double var = 0;
    for (std::size_t j = 0; j < n_in; ++j) {
      const double d = static_cast<double>(w[i * n_in + j]) - mean;
      var += d * d;
    }
    report.row_mean[i] = mean;
    report.row_variance[i] = var / static_cast<double>(n_in);
  }
  std::vector<double> dense(n_out * n_in);
  for (std::size_t i = 0; i < dense.size(); ++i) dense[i] = static_cast<double>(w[i]);
  report.singular_values = singular_values(dense, n_out, n_in);
  const double sigma_max = report.singular_values.empty() ? 0 : report.singular_values[0];
  report.numerical_rank = 0;
  for (double s : report.singular_values) {
    if (s > 1e-3 * sigma_max && sigma_max > 0) ++report.numerical_rank;
  }
  return report;
}

template <typename T>
MixingReport<T> inspect_mixing(const PcdNetModel<T>& model, std::size_t layer_index) {
  const auto layers = model.graphx_layers();
  if (layer_index >= layers.size()) {
    throw ConfigError("inspect_mixing: layer index " + std::to_string(layer_index) +
                      " out of range; model has " + std::to_string(layers.size()) +
                      " learned-mixing GraphX layers");
  }
  return inspect_mixing(*layers[layer_index]);
}

template <typename T>
std::string to_text(const MixingReport<T>& report) {
  std::ostringstream os;
  const std::size_t n_out = report.matrix.extent(0), n_in = report.matrix.extent(1);
  os << "mixing matrix: " << n_out << " x " << n_in << "\n";
  double mean_row_var = 0;
  for (double v : report.row_variance) mean_row_var += v;
  mean_row_var /= report.row_variance.empty() ? 1 : static_cast<double>(n_out);
  os << "mean per-row variance: " << mean_row_var << "\n";
  os << "numerical rank (sv > 1e-3 * max): " << report.numerical_rank << "\n";
  os << "top singular values:";
  for (std::size_t i = 0; i < std::min<std::size_t>(8, report.singular_values.size()); ++i) {
    os << " " << report.singular_values[i];
  }
  os << "\n";
  return os.str();
}

template <typename T>
CountReport count_params_macs(const PcdNetModel<T>& model) {
  CountReport report;
  report.layers = model.layer_stats();
  for (const LayerStat& s : report.layers) {
    report.total_params += s.params;
    report.total_macs += s.macs;
  }
  return report;
}

std::string to_text(const CountReport& report) {
  std::ostringstream os;
  os << "layer                         params         macs\n";
  char buf[128];
  for (const LayerStat& s : report.layers) {
    std::snprintf(buf, sizeof(buf), "%-24s %10llu %12llu\n", s.name.c_str(),
                  static_cast<unsigned long long>(s.params),
                  static_cast<unsigned long long>(s.macs));
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "%-24s %10llu %12llu\n", "total",
                static_cast<unsigned long long>(report.total_params),
                static_cast<unsigned long long>(report.total_macs));
  os << buf;
  return os.str();
}

std::string to_csv(const CountReport& report) {
  std::string out = "layer,params,macs\n";
  for (const LayerStat& s : report.layers) {
    out += s.name + "," + std::to_string(s.params) + "," + std::to_string(s.macs) + "\n";
  }
  out += "total," + std::to_string(report.total_params) + "," +
         std::to_string(report.total_macs) + "\n";
  return out;
}

AblationReport ablation_run(const Dataset& dataset, const ModelConfig& base,
                            const TrainConfig& train_cfg, const NNBackend& backend) {
  AblationReport report;
  const std::array<BlendMode, 3> modes = {BlendMode::kProjectionOnly, BlendMode::kAdainOnly,
                                          BlendMode::kFull};
  for (BlendMode mode : modes) {
    ModelConfig cfg = base;
    cfg.blend_mode = mode;
    Rng rng = Rng::derive(train_cfg.seed, {7});
    PcdNetModel<float> model(cfg, rng);
    Trainer<float> trainer(model, train_cfg, backend);
    trainer.run(dataset.train);
    AblationVariantResult result;
    result.name = to_string(mode);
    result.feature_width = blended_dim(cfg.encoder, mode);
    result.metrics = evaluate(model, dataset.test, backend, train_cfg.seed);
    report.variants.push_back(std::move(result));
  }
  return report;
}

namespace {

std::string ablation_table(const AblationReport& report, bool use_iou) {
  // Table shape: one row per variant, one column per category plus the mean.
  std::vector<std::string> categories;
  for (const auto& row : report.variants.front().metrics.per_category) {
    categories.push_back(row.category);
  }
  std::ostringstream os;
  os << (use_iou ? "IoU" : "CD");
  for (const auto& c : categories) os << "\t" << c;
  os << "\tmean\n";
  for (const auto& variant : report.variants) {
    os << variant.name;
    for (const auto& c : categories) {
      const auto it = std::find_if(variant.metrics.per_category.begin(),
                                   variant.metrics.per_category.end(),
                                   [&](const MetricsRow& r) { return r.category == c; });
      os << "\t";
      if (it != variant.metrics.per_category.end()) {
        os << (use_iou ? it->iou : it->cd);
      } else {
        os << "-";
      }
    }
    os << "\t" << (use_iou ? variant.metrics.overall.iou : variant.metrics.overall.cd) << "\n";
  }
  return os.str();
}

}  // namespace

std::string to_text(const AblationReport& report) {
  return ablation_table(report, false) + "\n" + ablation_table(report, true);
}

std::string to_csv(const AblationReport& report) {
  std::string out = "metric,variant,width";
  for (const auto& row : report.variants.front().metrics.per_category) {
    out += "," + row.category;
  }
  out += ",mean\n";
  for (const char* metric : {"cd", "iou"}) {
    const bool use_iou = std::string(metric) == "iou";
    for (const auto& variant : report.variants) {
      out += std::string(metric) + "," + variant.name + "," +
             std::to_string(variant.feature_width);
      for (const auto& row : variant.metrics.per_category) {
        out += "," + std::to_string(use_iou ? row.iou : row.cd);
      }
      out += "," + std::to_string(use_iou ? variant.metrics.overall.iou
                                          : variant.metrics.overall.cd) +
             "\n";
    }
  }
  return out;
}

#define PCDNET_INSTANTIATE_ANALYSIS(T)                                                    \
  template InterpolationResult<T> interpolate_latents<T>(                                 \
      const PcdNetModel<T>&, const std::array<Tensor<T>, 4>&, const CameraIntrinsics&,    \
      const Tensor<T>&);                                                                  \
  template MixingReport<T> inspect_mixing<T>(const GraphX<T>&);                           \
  template MixingReport<T> inspect_mixing<T>(const PcdNetModel<T>&, std::size_t);         \
  template std::string to_text<T>(const MixingReport<T>&);                                \
  template CountReport count_params_macs<T>(const PcdNetModel<T>&);

PCDNET_INSTANTIATE_ANALYSIS(float)
PCDNET_INSTANTIATE_ANALYSIS(double)

#undef PCDNET_INSTANTIATE_ANALYSIS

}  // namespace pcdnet
