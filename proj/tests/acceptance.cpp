// Acceptance suite: one criterion per function, one PASS/FAIL line each.
// Run with no arguments for the full gate, or with a list of criterion
// numbers to run a subset (the exit code then reflects that subset only).

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <thread>

#include "oracles.hpp"
#include "pcdnet/analysis.hpp"
#include "pcdnet/config.hpp"
#include "pcdnet/gradcheck.hpp"
#include "pcdnet/io.hpp"
#include "pcdnet/parallel.hpp"
#include "pcdnet/train.hpp"
#include "support.hpp"

using namespace pcdnet;
using pcdnet::testing::bit_equal;
using pcdnet::testing::chamfer_oracle;
using pcdnet::testing::graphx_oracle;
using pcdnet::testing::rand_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const CameraIntrinsics kDeskCam{56.0, 56.0, 32.0, 32.0, 1.0, 3.0};

DataConfig desk_data_config() {
  DataConfig cfg;
  cfg.per_category = 100;  // 5 categories: 400 train / 100 test at split 0.8
  cfg.split = 0.8;
  cfg.image_h = cfg.image_w = 64;
  cfg.gt_points = 1024;
  cfg.camera = kDeskCam;
  cfg.seed = 20;
  return cfg;
}

ModelConfig desk_model_config(Variant variant, std::size_t n_points) {
  ModelConfig cfg;
  cfg.encoder.channels = {16, 32, 64};
  cfg.encoder.image_h = cfg.encoder.image_w = 64;
  cfg.camera = kDeskCam;
  cfg.variant = variant;
  cfg.widths = {96, 64, 48};
  cfg.expansion = {1, 1, 1};
  cfg.n_points = n_points;
  return cfg;
}

TrainConfig desk_train_config(std::size_t epochs, std::size_t n_points) {
  TrainConfig cfg;
  // The published 5e-5 rate is tuned for ~125k-step full-scale training; at
  // desk scale (<= 2000 steps) it barely moves the weights, so the desk
  // experiment configs pin a proportionally larger rate.
  cfg.lr = 2e-3;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.init_points = n_points;
  cfg.seed = 77;
  return cfg;
}

// Shared across criteria 5-7: the toy dataset and the trained GraphX model.
struct ToyState {
  Dataset dataset;
  std::unique_ptr<PcdNetModel<float>> graphx_model;
  double trained_cd = 0;
  bool ready = false;
};
ToyState g_toy;

const Dataset& toy_dataset() {
  if (g_toy.dataset.train.empty()) g_toy.dataset = make_dataset(desk_data_config());
  return g_toy.dataset;
}

// --- criterion 1 -----------------------------------------------------------

Outcome run_gradient_suite() {
  const auto report = run_gradcheck(0);
  double worst = 0;
  std::string worst_name;
  for (const auto& c : report.cases) {
    if (c.max_rel_err > worst) {
      worst = c.max_rel_err;
      worst_name = c.name;
    }
  }
  std::ostringstream os;
  os << report.cases.size() << " cases, worst rel err " << worst << " (" << worst_name << ")";
  return {report.all_pass(), os.str()};
}

// --- criterion 2 -----------------------------------------------------------

Outcome run_chamfer_equivalence() {
  Rng rng(2024);
  double worst_gap = 0;
  for (int round = 0; round < 100; ++round) {
    const std::size_t n = 1 + rng.index(200);
    const std::size_t m = 1 + rng.index(200);
    auto x = rand_tensor<float>({n, 3}, rng, -1.5, 1.5);
    auto y = rand_tensor<float>({m, 3}, rng, -1.5, 1.5);
    const double brute = chamfer(x, y, NNBackend::brute_force()).item();
    const double grid = chamfer(x, y, NNBackend::uniform_grid()).item();
    worst_gap = std::max(worst_gap, std::abs(brute - grid));
    if (worst_gap > 1e-6) {
      return {false, "grid/brute disagree by " + std::to_string(worst_gap)};
    }
    // Exact invariants.
    if (chamfer(x, y).item() != chamfer(y, x).item()) {
      return {false, "symmetry violated"};
    }
    const auto reverse = [](const Tensor<float>& t) {
      const std::size_t rows = t.extent(0);
      std::vector<float> v(rows * 3);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t d = 0; d < 3; ++d) v[i * 3 + d] = t.at({rows - 1 - i, d});
      }
      return Tensor<float>({rows, 3}, std::move(v));
    };
    if (chamfer(reverse(x), reverse(y)).item() != chamfer(x, y).item()) {
      return {false, "permutation invariance violated"};
    }
    if (chamfer(x, y).item() < 0) return {false, "negative distance"};
  }
  return {true, "100 pairs, worst grid/brute gap " + std::to_string(worst_gap)};
}

// --- criterion 3 -----------------------------------------------------------

Outcome run_graphx_correctness() {
  Rng rng(3003);
  // Exact identity configuration.
  {
    const std::size_t n = 9, d = 6;
    auto g = GraphX<double>::learned(n, n, d, d, 0, Activation::kIdentity, rng);
    auto mw = g.mixing_weight.values_mut();
    std::fill(mw.begin(), mw.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) mw[i * n + i] = 1.0;
    auto tw = g.transform.values_mut();
    std::fill(tw.begin(), tw.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) tw[i * d + i] = 1.0;
    auto f = rand_tensor<double>({n, d}, rng);
    if (!bit_equal(g.forward(f), f)) return {false, "identity configuration is not exact"};
  }

  double worst = 0;
  for (int round = 0; round < 50; ++round) {
    const std::size_t n_in = 2 + rng.index(10);
    const std::size_t n_out = 2 + rng.index(12);  // includes n_out != n_in
    const std::size_t d_in = 5 + rng.index(8);
    const std::size_t d_out = 2 + rng.index(8);
    const std::size_t rank = (round % 2 == 0) ? 0 : 1 + rng.index((d_in - 1) / 2);
    auto g = GraphX<double>::learned(n_in, n_out, d_in, d_out, rank,
                                     round % 3 ? Activation::kRelu : Activation::kIdentity,
                                     rng);
    for (auto& b : g.mixing_bias.values_mut()) b = rng.uniform(-0.5, 0.5);
    for (auto& b : g.bias.values_mut()) b = rng.uniform(-0.5, 0.5);
    auto f = rand_tensor<double>({n_in, d_in}, rng);
    worst = std::max(worst, pcdnet::testing::max_abs_diff(g.forward(f), graphx_oracle(g, f)));
  }
  std::ostringstream os;
  os << "identity exact; 50 random configs (dense+factored) worst deviation " << worst;
  return {worst < 1e-5, os.str()};
}

// --- criterion 4 -----------------------------------------------------------

Outcome run_adain_stats() {
  Rng rng(4004);
  double worst_mean = 0, worst_std = 0;
  for (int round = 0; round < 50; ++round) {
    const std::size_t c = 2 + rng.index(12);
    const std::size_t h = 4 + rng.index(8), w = 4 + rng.index(8);
    const std::size_t n = 8 + rng.index(40);
    auto map = rand_tensor<float>({c, h, w}, rng, -2, 2);
    auto y = rand_tensor<float>({n, c}, rng, -2, 2);
    auto out = adain_2d_to_3d(map, y);
    auto map_stats = reduce_stats(map, {1, 2});
    auto out_stats = reduce_stats(out, {0});
    for (std::size_t ch = 0; ch < c; ++ch) {
      worst_mean = std::max<double>(
          worst_mean, std::abs(out_stats.first.values()[ch] - map_stats.first.values()[ch]));
      worst_std = std::max<double>(
          worst_std, std::abs(out_stats.second.values()[ch] - map_stats.second.values()[ch]));
    }
    // Exact permutation equivariance.
    std::vector<float> rev(n * c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) rev[i * c + ch] = y.at({n - 1 - i, ch});
    }
    auto out_rev = adain_2d_to_3d(map, Tensor<float>({n, c}, std::move(rev)));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (out_rev.at({i, ch}) != out.at({n - 1 - i, ch})) {
          return {false, "permutation equivariance not exact"};
        }
      }
    }
  }
  std::ostringstream os;
  os << "50 pairs, worst mean gap " << worst_mean << ", worst std gap " << worst_std;
  return {worst_mean < 1e-4 && worst_std < 1e-3, os.str()};
}

// --- criterion 5 -----------------------------------------------------------

Outcome run_toy_convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset& ds = toy_dataset();
  const std::size_t n_points = 500;
  const std::size_t epochs = 15;  // 400 train / batch 4 -> 1500 steps (<= 2000)

  Rng graphx_rng(501);
  g_toy.graphx_model = std::make_unique<PcdNetModel<float>>(
      desk_model_config(Variant::kGraphX, n_points), graphx_rng);
  const double untrained_cd =
      evaluate(*g_toy.graphx_model, ds.test, NNBackend::uniform_grid(), 1).overall.cd;
  {
    Trainer<float> trainer(*g_toy.graphx_model, desk_train_config(epochs, n_points));
    trainer.run(ds.train);
  }
  const double graphx_cd =
      evaluate(*g_toy.graphx_model, ds.test, NNBackend::uniform_grid(), 1).overall.cd;
  g_toy.trained_cd = graphx_cd;
  g_toy.ready = true;

  Rng fc_rng(502);
  PcdNetModel<float> fc_model(desk_model_config(Variant::kFc, n_points), fc_rng);
  {
    Trainer<float> trainer(fc_model, desk_train_config(epochs, n_points));
    trainer.run(ds.train);
  }
  const double fc_cd = evaluate(fc_model, ds.test, NNBackend::uniform_grid(), 1).overall.cd;

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  // The 30-minute budget assumes 8 cores; scale it to this machine.
  const std::size_t cores = std::max(1u, std::thread::hardware_concurrency());
  const double budget = 1800.0 * 8.0 / static_cast<double>(std::min<std::size_t>(cores, 8));

  std::ostringstream os;
  os << "held-out CD untrained " << untrained_cd << " -> graphx " << graphx_cd
     << " (improvement " << untrained_cd / graphx_cd << "x, gate >= 5x); fc " << fc_cd
     << " (graphx <= fc soft check: " << (graphx_cd <= fc_cd ? "holds" : "does not hold")
     << "); " << seconds << "s on " << cores << " cores (budget " << budget << "s)";
  const bool pass = graphx_cd * 5.0 <= untrained_cd && seconds < budget;
  return {pass, os.str()};
}

// --- criterion 6 -----------------------------------------------------------

Outcome run_scalability() {
  const Dataset& ds = toy_dataset();
  const std::size_t n_points = 2000;
  Rng mr(601);
  PcdNetModel<float> model(desk_model_config(Variant::kFc, n_points), mr);
  {
    Trainer<float> trainer(model, desk_train_config(2, n_points));
    trainer.run(ds.train);
  }

  double single_sum = 0, merged_sum = 0;
  std::size_t checked = 0;
  bool all_finite = true;
  bool count_ok = true;
  for (std::size_t s = 0; s < ds.test.size(); s += 4) {  // every 4th test sample
    const Sample& sample = ds.test[s];
    Rng rng = Rng::derive(606, {s});
    auto merged = generate_dense(model, sample.image, sample.cam, 40000, rng);
    count_ok = count_ok && merged.shape() == Shape{40000, 3};
    for (float v : merged.values()) all_finite = all_finite && std::isfinite(v);

    Rng rng_single = Rng::derive(607, {s});
    NoGradGuard guard;
    auto cloud = init_point_cloud<float>(n_points, sample.cam, 64, 64, rng_single);
    auto single = model.forward(sample.image, cloud, sample.cam);
    single_sum += chamfer(single, sample.gt_cloud).item();
    merged_sum += chamfer(merged, sample.gt_cloud).item();
    ++checked;
  }
  const double single_cd = single_sum / static_cast<double>(checked);
  const double merged_cd = merged_sum / static_cast<double>(checked);
  std::ostringstream os;
  os << "k=20 chunks -> 40000 points (" << (count_ok ? "exact" : "WRONG COUNT") << ", "
     << (all_finite ? "finite" : "NON-FINITE") << "); mean CD single " << single_cd
     << " vs merged " << merged_cd << " (gate <= 1.1x) over " << checked << " test images";
  return {count_ok && all_finite && merged_cd <= 1.1 * single_cd, os.str()};
}

// --- criterion 7 -----------------------------------------------------------

Outcome run_interpolation() {
  const Dataset& ds = toy_dataset();
  if (!g_toy.ready) {
    // Subset run without criterion 5: train briefly so the model is not raw.
    Rng mr(501);
    g_toy.graphx_model =
        std::make_unique<PcdNetModel<float>>(desk_model_config(Variant::kGraphX, 500), mr);
    Trainer<float> trainer(*g_toy.graphx_model, desk_train_config(2, 500));
    trainer.run(ds.train);
    g_toy.ready = true;
  }
  const PcdNetModel<float>& model = *g_toy.graphx_model;

  std::array<Tensor<float>, 4> images = {ds.test[0].image, ds.test[1].image, ds.test[2].image,
                                         ds.test[3].image};
  Rng cr(701);
  auto cloud = init_point_cloud<float>(model.config().n_points, kDeskCam, 64, 64, cr);
  auto result = interpolate_latents(model, images, kDeskCam, cloud);

  NoGradGuard guard;
  const bool corners_exact =
      bit_equal(result.clouds[0], model.forward(images[0], cloud, kDeskCam)) &&
      bit_equal(result.clouds[7], model.forward(images[1], cloud, kDeskCam)) &&
      bit_equal(result.clouds[56], model.forward(images[2], cloud, kDeskCam)) &&
      bit_equal(result.clouds[63], model.forward(images[3], cloud, kDeskCam));
  bool finite = true;
  for (const auto& c : result.clouds) {
    for (float v : c.values()) finite = finite && std::isfinite(v);
  }
  std::ostringstream os;
  os << "corners " << (corners_exact ? "bit-exact" : "NOT exact") << "; 64 clouds "
     << (finite ? "finite" : "NON-FINITE");
  return {corners_exact && finite, os.str()};
}

// --- criterion 8 -----------------------------------------------------------

Outcome run_reproducibility() {
  DataConfig dc;
  dc.categories = {Category::kSphere, Category::kBox, Category::kCylinder};
  dc.per_category = 8;
  dc.split = 0.75;
  dc.image_h = dc.image_w = 32;
  dc.gt_points = 128;
  dc.camera = {28.0, 28.0, 16.0, 16.0, 1.0, 3.0};
  dc.seed = 808;
  Dataset ds = make_dataset(dc);

  ModelConfig mc;
  mc.encoder.channels = {8, 16};
  mc.encoder.image_h = mc.encoder.image_w = 32;
  mc.camera = dc.camera;
  mc.variant = Variant::kGraphX;
  mc.widths = {32, 24};
  mc.expansion = {1, 1};
  mc.n_points = 96;

  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 8;
  tc.batch_size = 4;
  tc.init_points = 96;
  tc.seed = 11;

  const auto dir = pcdnet::testing::temp_dir("acc8");
  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    Rng mr(42);
    PcdNetModel<float> model(mc, mr);
    Trainer<float> trainer(model, tc);
    auto rows = trainer.run(ds.train);
    const auto path = dir / ("loss" + std::to_string(run) + ".csv");
    write_loss_csv(path, rows);
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    csv[run] = ss.str();
  }
  const bool identical = csv[0] == csv[1] && !csv[0].empty();

  // Save at half, resume, and compare the full trajectory.
  std::vector<std::string> reference, resumed;
  {
    Rng mr(42);
    PcdNetModel<float> model(mc, mr);
    Trainer<float> trainer(model, tc);
    for (const auto& row : trainer.run(ds.train)) reference.push_back(to_csv_row(row));
  }
  Checkpoint<float> ck;
  {
    Rng mr(42);
    PcdNetModel<float> model(mc, mr);
    TrainConfig half = tc;
    half.epochs = tc.epochs / 2;
    Trainer<float> trainer(model, half);
    for (const auto& row : trainer.run(ds.train)) resumed.push_back(to_csv_row(row));
    ck = trainer.snapshot();
    ck.train.epochs = tc.epochs;
    save_checkpoint(dir / "half.pcdc", ck);
  }
  {
    auto ck2 = load_checkpoint<float>(dir / "half.pcdc");
    auto model = model_from_checkpoint(ck2);
    Trainer<float> trainer(model, ck2.train);
    trainer.restore(ck2);
    for (const auto& row : trainer.run(ds.train)) resumed.push_back(to_csv_row(row));
  }
  const bool resume_exact = reference == resumed;
  std::filesystem::remove_all(dir);

  std::ostringstream os;
  os << "two seeded runs: " << (identical ? "bit-identical CSVs" : "CSVs DIFFER")
     << "; save/resume trajectory: " << (resume_exact ? "exact" : "DIVERGES");
  return {identical && resume_exact, os.str()};
}

// --- criterion 9 -----------------------------------------------------------

Outcome run_ablation_harness() {
  // Desk width arithmetic, asserted exactly.
  EncoderConfig desk;
  desk.channels = {16, 32, 64};
  if (blended_dim(desk, BlendMode::kFull) != 227 ||
      blended_dim(desk, BlendMode::kProjectionOnly) != 115 ||
      blended_dim(desk, BlendMode::kAdainOnly) != 115) {
    return {false, "feature width arithmetic broken"};
  }

  DataConfig dc;
  dc.categories = {Category::kSphere, Category::kBox, Category::kCylinder};
  dc.per_category = 12;
  dc.split = 0.67;
  dc.image_h = dc.image_w = 32;
  dc.gt_points = 128;
  dc.camera = {28.0, 28.0, 16.0, 16.0, 1.0, 3.0};
  dc.seed = 909;
  Dataset ds = make_dataset(dc);

  ModelConfig mc;
  mc.encoder.channels = {8, 16};
  mc.encoder.image_h = mc.encoder.image_w = 32;
  mc.camera = dc.camera;
  mc.variant = Variant::kGraphX;
  mc.widths = {32, 24};
  mc.expansion = {1, 1};
  mc.n_points = 96;

  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 4;
  tc.batch_size = 4;
  tc.init_points = 96;
  tc.seed = 13;

  auto report = ablation_run(ds, mc, tc);
  const bool shape_ok = report.variants.size() == 3 &&
                        report.variants[0].metrics.per_category.size() == 3 &&
                        report.variants[1].metrics.per_category.size() == 3 &&
                        report.variants[2].metrics.per_category.size() == 3;
  const bool width_ok = report.variants[0].feature_width == 8 + 16 + 3 &&
                        report.variants[1].feature_width == 8 + 16 + 3 &&
                        report.variants[2].feature_width == 2 * (8 + 16) + 3;
  std::ostringstream os;
  os << "3 variants x (3 categories + mean); widths "
     << report.variants[0].feature_width << "/" << report.variants[1].feature_width << "/"
     << report.variants[2].feature_width << "; full CD "
     << report.variants[2].metrics.overall.cd << " vs projection "
     << report.variants[0].metrics.overall.cd << " vs adain "
     << report.variants[1].metrics.overall.cd << " (directional, reported not gated)";
  return {shape_ok && width_ok, os.str()};
}

// --- criterion 10 ----------------------------------------------------------

Outcome run_file_formats() {
  const auto dir = pcdnet::testing::temp_dir("acc10");
  Rng rng(1010);
  bool ok = true;
  std::string why;

  auto t32 = rand_tensor<float>({4, 5}, rng);
  save_pcdt(dir / "t32.pcdt", t32);
  if (!bit_equal(load_pcdt<float>(dir / "t32.pcdt"), t32)) {
    ok = false;
    why += "pcdt f32 not bit-exact; ";
  }
  auto t64 = rand_tensor<double>({3, 2, 2}, rng);
  save_pcdt(dir / "t64.pcdt", t64);
  if (!bit_equal(load_pcdt<double>(dir / "t64.pcdt"), t64)) {
    ok = false;
    why += "pcdt f64 not bit-exact; ";
  }

  auto cloud = rand_tensor<float>({64, 3}, rng, -2, 2);
  export_ply(cloud, dir / "c.ply");
  auto back = import_ply<float>(dir / "c.ply");
  if (pcdnet::testing::max_abs_diff(back, cloud) >= 1e-5) {
    ok = false;
    why += "ply round trip above 1e-5; ";
  }

  ExperimentConfig cfg;
  cfg.image_size = 32;
  cfg.widths = {24, 16};
  cfg.channels = {6, 12};
  cfg.lr = 0.002;
  const std::string canon = serialize_config(cfg);
  if (serialize_config(parse_config(canon)) != canon) {
    ok = false;
    why += "config fixed point fails; ";
  }

  std::filesystem::remove_all(dir);
  return {ok, ok ? "pcdt bit-exact, ply within 1e-5, config fixed point" : why};
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> criteria = {
      {1, "gradient suite", run_gradient_suite},
      {2, "chamfer backend equivalence", run_chamfer_equivalence},
      {3, "graphx correctness", run_graphx_correctness},
      {4, "adain statistics", run_adain_stats},
      {5, "toy convergence", run_toy_convergence},
      {6, "scalability (dense generation)", run_scalability},
      {7, "interpolation endpoints", run_interpolation},
      {8, "reproducibility", run_reproducibility},
      {9, "ablation harness", run_ablation_harness},
      {10, "file formats", run_file_formats},
  };

  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& entry : criteria) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), entry.id) == selected.end()) {
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = entry.fn();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %2d (%s): %s [%.1fs]\n", outcome.pass ? "PASS" : "FAIL",
                entry.id, entry.name, outcome.detail.c_str(), seconds);
    std::fflush(stdout);
    failures += outcome.pass ? 0 : 1;
  }
  if (failures == 0) {
    std::printf("acceptance: all criteria passed\n");
  } else {
    std::printf("acceptance: %d criteria FAILED\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
