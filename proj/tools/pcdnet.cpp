// pcdnet: data generation, training, evaluation, inference and model
// introspection in one binary. Every run writes its artifacts into a run
// directory so an experiment can be reproduced from what it leaves behind.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "pcdnet/analysis.hpp"
#include "pcdnet/config.hpp"
#include "pcdnet/gradcheck.hpp"
#include "pcdnet/io.hpp"
#include "pcdnet/parallel.hpp"
#include "pcdnet/train.hpp"

namespace fs = std::filesystem;
using namespace pcdnet;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::int64_t seed = -1;  // -1 = take from config
  bool deterministic = false;
  std::size_t threads = 0;
};

ExperimentConfig resolve_config(const GlobalOpts& g) {
  ExperimentConfig cfg;
  if (!g.config_path.empty()) cfg = load_config(g.config_path);
  if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
  if (g.deterministic) cfg.deterministic = true;
  if (g.threads != 0) cfg.threads = g.threads;
  set_thread_count(cfg.threads);
  return cfg;
}

// Run-directory layout: config.ini (resolved), loss.csv, checkpoints/,
// metrics.{txt,csv}.
void write_resolved_config(const ExperimentConfig& cfg, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  save_config(run_dir / "config.ini", cfg);
}

std::vector<Sample> load_split(const fs::path& data_dir, const std::string& split) {
  Dataset ds = load_dataset(data_dir);
  if (split == "train") return std::move(ds.train);
  if (split == "test") return std::move(ds.test);
  throw ConfigError("split must be train|test, got '" + split + "'");
}

int cmd_gen_data(const GlobalOpts& g, const std::string& out_dir) {
  const ExperimentConfig cfg = resolve_config(g);
  Dataset ds = make_dataset(data_config_from(cfg));
  save_dataset(ds, out_dir);
  std::printf("wrote %zu train / %zu test samples to %s\n", ds.train.size(), ds.test.size(),
              out_dir.c_str());
  return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& data_dir, const std::string& run_dir_flag,
              const std::string& resume_path) {
  ExperimentConfig cfg = resolve_config(g);
  if (!run_dir_flag.empty()) cfg.run_dir = run_dir_flag;
  const fs::path run_dir = cfg.run_dir;
  write_resolved_config(cfg, run_dir);
  fs::create_directories(run_dir / "checkpoints");

  Dataset ds = load_dataset(data_dir);
  const NNBackend backend = nn_backend_from_string(cfg.nn_backend);

  Rng model_rng = Rng::derive(cfg.seed, {1});
  PcdNetModel<float> model(model_config_from(cfg), model_rng);
  Trainer<float> trainer(model, train_config_from(cfg), backend);

  std::vector<LossRow> all_rows;
  if (!resume_path.empty()) {
    auto ck = load_checkpoint<float>(resume_path);
    // Rebuild against the checkpoint's own configuration.
    model = model_from_checkpoint(ck);
    trainer = Trainer<float>(model, ck.train, backend);
    trainer.restore(ck);
    std::printf("resumed from %s at step %zu\n", resume_path.c_str(), trainer.step());
  }

  const std::size_t every = cfg.checkpoint_every;
  auto rows = trainer.run(ds.train, [&](const LossRow& row, Trainer<float>& t) {
    if (every > 0 && row.step % every == 0) {
      save_checkpoint(run_dir / "checkpoints" / ("step_" + std::to_string(row.step) + ".pcdc"),
                      t.snapshot());
    }
    if (row.step % 50 == 0) {
      std::printf("step %zu epoch %zu lr %.3g chamfer %.6g total %.6g\n", row.step, row.epoch,
                  row.lr, row.chamfer, row.total);
    }
  });
  all_rows.insert(all_rows.end(), rows.begin(), rows.end());
  write_loss_csv(run_dir / "loss.csv", all_rows);
  save_checkpoint(run_dir / "checkpoints" / "latest.pcdc", trainer.snapshot());

  MetricsReport report = evaluate(model, ds.test, backend, cfg.seed);
  atomic_write(run_dir / "metrics.txt", to_text(report));
  atomic_write(run_dir / "metrics.csv", to_csv(report));
  std::printf("%s", to_text(report).c_str());
  std::printf("run artifacts in %s\n", run_dir.string().c_str());
  return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& checkpoint, const std::string& data_dir,
             const std::string& split, const std::string& out_path) {
  const ExperimentConfig cfg = resolve_config(g);
  auto ck = load_checkpoint<float>(checkpoint);
  auto model = model_from_checkpoint(ck);
  auto samples = load_split(data_dir, split);
  MetricsReport report =
      evaluate(model, samples, nn_backend_from_string(cfg.nn_backend), cfg.seed);
  std::printf("%s", to_text(report).c_str());
  if (!out_path.empty()) {
    atomic_write(out_path, to_csv(report));
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_infer(const GlobalOpts& g, const std::string& checkpoint, const std::string& image_path,
              const std::string& out_path, std::size_t points) {
  const ExperimentConfig cfg = resolve_config(g);
  auto ck = load_checkpoint<float>(checkpoint);
  auto model = model_from_checkpoint(ck);
  Tensor<float> image = load_pcdt<float>(image_path);
  Rng rng = Rng::derive(cfg.seed, {5});
  const CameraIntrinsics cam = ck.model.camera;
  std::size_t total = points;
  if (total == 0) total = model.output_points(model.config().n_points);
  Tensor<float> cloud = generate_dense(model, image, cam, total, rng);
  export_ply(cloud, out_path);
  std::printf("wrote %zu points to %s\n", cloud.extent(0), out_path.c_str());
  return 0;
}

int cmd_interpolate(const GlobalOpts& g, const std::string& checkpoint,
                    const std::vector<std::string>& images, const std::string& out_dir) {
  const ExperimentConfig cfg = resolve_config(g);
  auto ck = load_checkpoint<float>(checkpoint);
  auto model = model_from_checkpoint(ck);
  if (images.size() != 4) throw ConfigError("interpolate needs exactly 4 corner images");
  std::array<Tensor<float>, 4> corner_images;
  for (std::size_t i = 0; i < 4; ++i) corner_images[i] = load_pcdt<float>(images[i]);
  Rng rng = Rng::derive(cfg.seed, {6});
  const auto& mc = model.config();
  Tensor<float> cloud = init_point_cloud<float>(mc.n_points, mc.camera, mc.encoder.image_h,
                                                mc.encoder.image_w, rng);
  auto result = interpolate_latents(model, corner_images, mc.camera, cloud);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < result.grid; ++i) {
    for (std::size_t j = 0; j < result.grid; ++j) {
      char name[64];
      std::snprintf(name, sizeof(name), "grid_%zu_%zu.ply", i, j);
      export_ply(result.clouds[i * result.grid + j], fs::path(out_dir) / name);
    }
  }
  std::printf("wrote %zu interpolated clouds to %s\n", result.clouds.size(), out_dir.c_str());
  return 0;
}

int cmd_inspect_mixing(const GlobalOpts&, const std::string& checkpoint, std::size_t layer,
                       const std::string& out_dir) {
  auto ck = load_checkpoint<float>(checkpoint);
  auto model = model_from_checkpoint(ck);
  auto report = inspect_mixing(model, layer);
  fs::create_directories(out_dir);
  save_pcdt(fs::path(out_dir) / "mixing.pcdt", report.matrix);
  std::string csv = "row,mean,variance\n";
  for (std::size_t i = 0; i < report.row_mean.size(); ++i) {
    csv += std::to_string(i) + "," + std::to_string(report.row_mean[i]) + "," +
           std::to_string(report.row_variance[i]) + "\n";
  }
  atomic_write(fs::path(out_dir) / "rows.csv", csv);
  std::string sv = "index,sigma\n";
  for (std::size_t i = 0; i < report.singular_values.size(); ++i) {
    sv += std::to_string(i) + "," + std::to_string(report.singular_values[i]) + "\n";
  }
  atomic_write(fs::path(out_dir) / "spectrum.csv", sv);
  atomic_write(fs::path(out_dir) / "summary.txt", to_text(report));
  std::printf("%s", to_text(report).c_str());
  return 0;
}

int cmd_count_macs(const GlobalOpts& g, const std::string& out_path) {
  const ExperimentConfig cfg = resolve_config(g);
  Rng rng(0);  // counts do not depend on the values
  PcdNetModel<float> model(model_config_from(cfg), rng);
  auto report = count_params_macs(model);
  std::printf("%s", to_text(report).c_str());
  if (!out_path.empty()) {
    atomic_write(out_path, to_csv(report));
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_ablate(const GlobalOpts& g, const std::string& data_dir,
               const std::string& run_dir_flag) {
  ExperimentConfig cfg = resolve_config(g);
  if (!run_dir_flag.empty()) cfg.run_dir = run_dir_flag;
  const fs::path run_dir = cfg.run_dir;
  write_resolved_config(cfg, run_dir);

  Dataset ds = load_dataset(data_dir);
  auto report = ablation_run(ds, model_config_from(cfg), train_config_from(cfg),
                             nn_backend_from_string(cfg.nn_backend));
  atomic_write(run_dir / "ablation.txt", to_text(report));
  atomic_write(run_dir / "ablation.csv", to_csv(report));
  std::printf("%s", to_text(report).c_str());
  std::printf("ablation artifacts in %s\n", run_dir.string().c_str());
  return 0;
}

int cmd_gradcheck(const GlobalOpts& g) {
  const ExperimentConfig cfg = resolve_config(g);
  const auto report = run_gradcheck(cfg.seed);
  std::printf("%s", to_text(report).c_str());
  return report.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PCDNet: single-image point cloud deformation"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "experiment config file (sectioned key = value)");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_flag("--deterministic", g.deterministic, "force deterministic mode");
  app.add_option("--threads", g.threads, "worker threads (0 = hardware)");

  std::string out_dir = "data";
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  std::string data_dir, run_dir, resume;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--run", run_dir, "run directory (defaults to io.run_dir)");
  train->add_option("--resume", resume, "checkpoint to resume from");

  std::string checkpoint, split = "test", out_path;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--split", split, "train|test");
  eval->add_option("--out", out_path, "metrics CSV output");

  std::string image_path, ply_path;
  std::size_t points = 0;
  auto* infer = app.add_subcommand("infer", "image -> PLY point cloud");
  infer->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  infer->add_option("--image", image_path, "input image (PCDT, 1xHxW)")->required();
  infer->add_option("--out", ply_path, "output PLY path")->required();
  infer->add_option("--points", points,
                    "total points; multiple of the model output size (0 = one chunk)");

  std::vector<std::string> corner_images;
  auto* interp = app.add_subcommand("interpolate", "decode an 8x8 latent interpolation grid");
  interp->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  interp->add_option("--images", corner_images, "four corner images (PCDT)")->expected(4);
  interp->add_option("--out", out_dir, "output directory for 64 PLY files")->required();

  std::size_t layer = 0;
  auto* inspect = app.add_subcommand("inspect-mixing", "dump a mixing matrix and its stats");
  inspect->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  inspect->add_option("--layer", layer, "learned-mixing GraphX layer index");
  inspect->add_option("--out", out_dir, "output directory")->required();

  auto* macs = app.add_subcommand("count-macs", "analytic parameter / MAC counts");
  macs->add_option("--out", out_path, "optional CSV output");

  auto* ablate = app.add_subcommand("ablate", "train and compare feature ablations");
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--run", run_dir, "run directory");

  app.add_subcommand("gradcheck", "finite-difference gradient suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors exit 2, --help exits 0
  }

  try {
    if (gen->parsed()) return cmd_gen_data(g, out_dir);
    if (train->parsed()) return cmd_train(g, data_dir, run_dir, resume);
    if (eval->parsed()) return cmd_eval(g, checkpoint, data_dir, split, out_path);
    if (infer->parsed()) return cmd_infer(g, checkpoint, image_path, ply_path, points);
    if (interp->parsed()) return cmd_interpolate(g, checkpoint, corner_images, out_dir);
    if (inspect->parsed()) return cmd_inspect_mixing(g, checkpoint, layer, out_dir);
    if (macs->parsed()) return cmd_count_macs(g, out_path);
    if (ablate->parsed()) return cmd_ablate(g, data_dir, run_dir);
    if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck(g);
  } catch (const DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return 1;
  } catch (const DomainError& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
