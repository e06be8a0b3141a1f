#pragma once

#include <array>
#include <string>
#include <vector>

#include "pcdnet/model.hpp"
#include "pcdnet/train.hpp"

namespace pcdnet {

// Decoded clouds of an 8x8 bilinear-convex grid of latent codes anchored at
// four corner images, all built with one shared initial cloud. Row-major:
// clouds[i*grid+j]; corners (0,0)->images[0], (0,7)->images[1],
// (7,0)->images[2], (7,7)->images[3]. Corner cells reuse the corner code
// itself, so they decode bit-identically to direct forward passes.
template <typename T>
struct InterpolationResult {
  std::size_t grid = 8;
  std::vector<Tensor<T>> clouds;
};

template <typename T>
InterpolationResult<T> interpolate_latents(const PcdNetModel<T>& model,
                                           const std::array<Tensor<T>, 4>& images,
                                           const CameraIntrinsics& cam,
                                           const Tensor<T>& fixed_cloud);

// Mixing-matrix introspection: the raw matrix, per-output-row statistics over
// inputs, and the singular-value spectrum with the numerical rank (count of
// singular values above 1e-3 * sigma_max).
template <typename T>
struct MixingReport {
  Tensor<T> matrix;  // [n_out, n_in]
  std::vector<double> row_mean;
  std::vector<double> row_variance;
  std::vector<double> singular_values;  // descending
  std::size_t numerical_rank = 0;
};

// Spectrum of an arbitrary matrix via one-sided Jacobi; exposed for tests.
std::vector<double> singular_values(const std::vector<double>& a, std::size_t rows,
                                    std::size_t cols);

template <typename T>
MixingReport<T> inspect_mixing(const GraphX<T>& layer);

// layer_index selects among the model's learned-mixing GraphX layers in
// network order.
template <typename T>
MixingReport<T> inspect_mixing(const PcdNetModel<T>& model, std::size_t layer_index);

template <typename T>
std::string to_text(const MixingReport<T>& report);

struct CountReport {
  std::vector<LayerStat> layers;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;
};

// Analytic per-layer parameter and multiply-accumulate counts; depends only
// on the configuration, never on parameter values.
template <typename T>
CountReport count_params_macs(const PcdNetModel<T>& model);

std::string to_text(const CountReport& report);
std::string to_csv(const CountReport& report);

struct AblationVariantResult {
  std::string name;  // projection | adain | full
  std::size_t feature_width = 0;
  MetricsReport metrics;
};

struct AblationReport {
  std::vector<AblationVariantResult> variants;
};

// Trains one model per feature composition (projection-only, adain-only,
// full), identical otherwise, and evaluates each on the test split.
AblationReport ablation_run(const Dataset& dataset, const ModelConfig& base,
                            const TrainConfig& train_cfg,
                            const NNBackend& backend = NNBackend::uniform_grid());

std::string to_text(const AblationReport& report);
std::string to_csv(const AblationReport& report);

}  // namespace pcdnet
