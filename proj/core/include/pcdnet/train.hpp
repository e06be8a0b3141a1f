#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcdnet/data_synth.hpp"
#include "pcdnet/losses.hpp"
#include "pcdnet/model.hpp"
#include "pcdnet/optim.hpp"

namespace pcdnet {

struct TrainConfig {
  double lr = 5e-5;
  double lr_decay = 0.3;
  // Epochs at which the learning rate is multiplied by lr_decay. Empty means
  // derived: floor(epochs/2) and floor(epochs*4/5), the published schedule
  // shape at any epoch count.
  std::vector<std::size_t> milestones;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double l2_lambda = 1e-5;
  std::size_t batch_size = 4;
  std::size_t epochs = 10;
  std::size_t init_points = 2000;
  std::uint64_t seed = 0;
  bool deterministic = true;

  std::vector<std::size_t> resolved_milestones() const;
  void validate() const;
};

struct LossRow {
  std::size_t step = 0;   // 1-based
  std::size_t epoch = 0;  // 0-based
  double lr = 0;
  double chamfer = 0;  // batch-mean data term
  double l2 = 0;
  double total = 0;
};

std::string loss_csv_header();
std::string to_csv_row(const LossRow& row);
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRow> rows);

// Frustum-covering random cloud: (u,v) uniform over the image rectangle,
// depth uniform in [near, far], back-projected through the intrinsics.
// Draw order per point: u, v, z.
template <typename T>
Tensor<T> init_point_cloud(std::size_t n, const CameraIntrinsics& cam, std::size_t image_h,
                           std::size_t image_w, Rng& rng);

template <typename T>
struct Checkpoint {
  std::uint32_t version = 1;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t step = 0;
  std::uint64_t adam_t = 0;
  std::vector<NamedParam<T>> params;
  std::vector<NamedParam<T>> adam_m;
  std::vector<NamedParam<T>> adam_v;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck);
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// Rebuilds a model from a checkpoint (fresh init overwritten by the stored
// parameter tensors, matched by name).
template <typename T>
PcdNetModel<T> model_from_checkpoint(const Checkpoint<T>& ck);

// Minimizes chamfer + l2 with Adam and the milestone LR schedule. Every
// random draw is derived from (seed, step) so a restored checkpoint continues
// the exact trajectory of an uninterrupted run.
template <typename T>
class Trainer {
 public:
  using StepFn = std::function<void(const LossRow&, Trainer&)>;

  Trainer(PcdNetModel<T>& model, const TrainConfig& cfg,
          NNBackend backend = NNBackend::uniform_grid());

  // Runs until cfg.epochs are complete; returns the rows of this call.
  std::vector<LossRow> run(std::span<const Sample> data, const StepFn& on_step = {});

  Checkpoint<T> snapshot() const;
  void restore(const Checkpoint<T>& ck);

  std::size_t step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  double lr_at_epoch(std::size_t epoch) const;

  PcdNetModel<T>& model_;
  TrainConfig cfg_;
  NNBackend backend_;
  std::vector<NamedParam<T>> params_;
  Adam<T> adam_;
  std::size_t step_ = 0;  // completed steps
};

struct MetricsRow {
  std::string category;
  double cd = 0;
  double iou = 0;
  std::size_t count = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> per_category;
  MetricsRow overall;  // category = "mean"
};

std::string to_text(const MetricsReport& report);
std::string to_csv(const MetricsReport& report);

// Mean CD and IoU per category plus overall. One fresh initial cloud per
// sample, derived from (seed, sample id).
template <typename T>
MetricsReport evaluate(const PcdNetModel<T>& model, std::span<const Sample> samples,
                       const NNBackend& backend = NNBackend::uniform_grid(),
                       std::uint64_t seed = 0);

// Merges k = total_points / chunk forward passes over independently drawn
// initial clouds into one dense cloud. total_points must be a multiple of the
// model's output size.
template <typename T>
Tensor<T> generate_dense(const PcdNetModel<T>& model, const Tensor<T>& image,
                         const CameraIntrinsics& cam, std::size_t total_points, Rng& rng);

}  // namespace pcdnet
