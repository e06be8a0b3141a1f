#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pcdnet/data_synth.hpp"
#include "pcdnet/model.hpp"
#include "pcdnet/train.hpp"

namespace pcdnet {

// Whole-experiment description, read from a sectioned key=value text file.
// Unknown sections or keys are rejected; every field has a default; the
// resolved config is echoed verbatim into the run directory.
struct ExperimentConfig {
  // [data]
  std::vector<std::string> categories = {"sphere", "box", "cylinder", "capsule", "torus"};
  std::size_t per_category = 100;
  double split = 0.8;
  std::size_t image_size = 64;
  std::size_t gt_points = 1024;
  double fx = 56, fy = 56;
  double cx = -1, cy = -1;  // negative = image_size / 2, resolved at parse time
  double near_z = 1.0, far_z = 3.0;

  // [model]
  std::string variant = "graphx";
  std::vector<std::size_t> widths = {96, 64, 48};
  std::vector<std::size_t> channels = {16, 32, 64};
  std::vector<std::size_t> expansion = {1, 1, 2};
  std::size_t factored_rank = 0;
  std::string blend = "full";

  // [train]
  double lr = 5e-5;
  double lr_decay = 0.3;
  std::vector<std::size_t> milestones;  // empty = derived from epochs
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double l2_lambda = 1e-5;
  std::size_t batch_size = 4;
  std::size_t epochs = 10;
  std::size_t init_points = 2000;

  // [io]
  std::string run_dir = "runs/default";
  std::size_t checkpoint_every = 200;
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::size_t threads = 0;  // 0 = hardware default
  std::string nn_backend = "grid";
};

ExperimentConfig parse_config(const std::string& text);
std::string serialize_config(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

CameraIntrinsics camera_from(const ExperimentConfig& cfg);
DataConfig data_config_from(const ExperimentConfig& cfg);
ModelConfig model_config_from(const ExperimentConfig& cfg);
TrainConfig train_config_from(const ExperimentConfig& cfg);

}  // namespace pcdnet
