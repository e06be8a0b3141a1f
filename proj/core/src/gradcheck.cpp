#include "pcdnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pcdnet/blending.hpp"
#include "pcdnet/layers.hpp"
#include "pcdnet/losses.hpp"
#include "pcdnet/model.hpp"
#include "pcdnet/ops.hpp"
#include "pcdnet/train.hpp"

namespace pcdnet {

bool GradCheckReport::all_pass() const {
  for (const auto& c : cases) {
    if (!c.pass) return false;
  }
  return !cases.empty();
}

double max_rel_grad_error(const std::function<Tensor<double>()>& loss,
                          std::vector<Tensor<double>> inputs, double fd_step,
                          std::size_t max_probes_per_input, Rng* probe_rng) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<double> l = loss();
  backward(l);

  double max_err = 0;
  for (auto& t : inputs) {
    const std::size_t n = t.size();
    std::vector<std::size_t> probes;
    if (max_probes_per_input == 0 || n <= max_probes_per_input) {
      probes.resize(n);
      for (std::size_t i = 0; i < n; ++i) probes[i] = i;
    } else {
      for (std::size_t k = 0; k < max_probes_per_input; ++k) {
        probes.push_back(probe_rng != nullptr ? probe_rng->index(n)
                                              : k * n / max_probes_per_input);
      }
    }
    const auto grad = t.grad();
    for (std::size_t e : probes) {
      const double analytic = grad.empty() ? 0.0 : grad[e];
      auto vals = t.values_mut();
      const double saved = vals[e];
      double fp, fm;
      {
        NoGradGuard guard;
        vals[e] = saved + fd_step;
        fp = loss().item();
        vals[e] = saved - fd_step;
        fm = loss().item();
        vals[e] = saved;
      }
      const double fd = (fp - fm) / (2 * fd_step);
      const double err =
          std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

namespace {

Tensor<double> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

// Values bounded away from zero, for relu inputs and divisors.
Tensor<double> rand_tensor_off_zero(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    x = sign * rng.uniform(lo, hi);
  }
  return Tensor<double>(std::move(shape), std::move(v));
}

// Fixed random projection to a scalar keeps every output element in play.
Tensor<double> wsum(const Tensor<double>& t, const Tensor<double>& w) {
  return sum(mul(t, w));
}

struct Suite {
  GradCheckReport report;
  std::uint64_t seed;
  int rounds = 20;

  void run_case(const std::string& name, double tolerance,
                const std::function<double(Rng&)>& one_round) {
    double worst = 0;
    std::uint64_t tag = 0;
    for (char ch : name) tag = tag * 131 + static_cast<unsigned char>(ch);
    for (int r = 0; r < rounds; ++r) {
      Rng rng = Rng::derive(seed, {0x6ec, tag, static_cast<std::uint64_t>(r)});
      worst = std::max(worst, one_round(rng));
    }
    report.cases.push_back({name, worst, tolerance, worst < tolerance});
  }
};

double end_to_end_case(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, {0xE2E});
  ModelConfig cfg;
  cfg.encoder.channels = {4, 8};
  cfg.encoder.image_h = 16;
  cfg.encoder.image_w = 16;
  cfg.camera = {14.0, 14.0, 8.0, 8.0, 1.0, 3.0};
  cfg.variant = Variant::kGraphX;
  cfg.widths = {16, 8};
  cfg.expansion = {1, 1};
  cfg.n_points = 32;
  PcdNetModel<double> model(cfg, rng);

  Tensor<double> image = rand_tensor({1, 16, 16}, rng, 0.0, 1.0);
  Tensor<double> cloud = init_point_cloud<double>(32, cfg.camera, 16, 16, rng);
  Tensor<double> gt = rand_tensor({40, 3}, rng, -0.4, 0.4);
  {
    auto v = gt.values_mut();
    for (std::size_t i = 0; i < 40; ++i) v[i * 3 + 2] = rng.uniform(1.4, 2.6);
  }

  std::vector<Tensor<double>> inputs;
  inputs.push_back(cloud);
  std::vector<Tensor<double>> params;
  for (auto& p : model.named_params()) {
    inputs.push_back(p.tensor);
    params.push_back(p.tensor);
  }

  const auto loss = [&]() {
    Tensor<double> pred = model.forward(image, cloud, cfg.camera);
    Tensor<double> data = chamfer(pred, gt, NNBackend::brute_force());
    return add(data, l2_penalty(std::span<const Tensor<double>>(params), 1e-3));
  };
  Rng probe_rng = Rng::derive(seed, {0xE2E, 1});
  return max_rel_grad_error(loss, inputs, 1e-5, 2, &probe_rng);
}

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed) {
  Suite suite;
  suite.seed = seed;
  const double op_tol = 1e-4;

  suite.run_case("matmul", op_tol, [](Rng& rng) {
    auto a = rand_tensor({5, 4}, rng);
    auto b = rand_tensor({4, 3}, rng);
    auto w = rand_tensor({5, 3}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(matmul(a, b), w); }, {a, b});
  });

  suite.run_case("add.broadcast", op_tol, [](Rng& rng) {
    auto a = rand_tensor({4, 1, 3}, rng);
    auto b = rand_tensor({1, 5, 3}, rng);
    auto w = rand_tensor({4, 5, 3}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(add(a, b), w); }, {a, b});
  });

  suite.run_case("sub.broadcast", op_tol, [](Rng& rng) {
    auto a = rand_tensor({4, 5}, rng);
    auto b = rand_tensor({5}, rng);
    auto w = rand_tensor({4, 5}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(sub(a, b), w); }, {a, b});
  });

  suite.run_case("mul.broadcast", op_tol, [](Rng& rng) {
    auto a = rand_tensor({4, 1, 3}, rng);
    auto b = rand_tensor({1, 5, 3}, rng);
    auto w = rand_tensor({4, 5, 3}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(mul(a, b), w); }, {a, b});
  });

  suite.run_case("div", op_tol, [](Rng& rng) {
    auto a = rand_tensor({6, 4}, rng);
    auto b = rand_tensor_off_zero({4}, rng, 0.5, 1.5);
    auto w = rand_tensor({6, 4}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(div(a, b), w); }, {a, b});
  });

  suite.run_case("scale", op_tol, [](Rng& rng) {
    auto a = rand_tensor({7, 3}, rng);
    const double s = rng.uniform(-2, 2);
    auto w = rand_tensor({7, 3}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(scale(a, s), w); }, {a});
  });

  suite.run_case("relu", op_tol, [](Rng& rng) {
    auto a = rand_tensor_off_zero({6, 5}, rng, 0.1, 1.0);
    auto w = rand_tensor({6, 5}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(relu(a), w); }, {a});
  });

  suite.run_case("sum", op_tol, [](Rng& rng) {
    auto a = rand_tensor({3, 4, 2}, rng);
    return max_rel_grad_error([&] { return sum(a); }, {a});
  });

  suite.run_case("reduce_stats", op_tol, [](Rng& rng) {
    auto x = rand_tensor({8, 16}, rng);
    auto wm0 = rand_tensor({16}, rng, 0.2, 1.0);
    auto ws0 = rand_tensor({16}, rng, 0.2, 1.0);
    auto wm1 = rand_tensor({8}, rng, 0.2, 1.0);
    auto ws1 = rand_tensor({8}, rng, 0.2, 1.0);
    return max_rel_grad_error(
        [&] {
          auto stats0 = reduce_stats(x, {0});
          auto stats1 = reduce_stats(x, {1});
          return add(add(wsum(stats0.first, wm0), wsum(stats0.second, ws0)),
                     add(wsum(stats1.first, wm1), wsum(stats1.second, ws1)));
        },
        {x});
  });

  suite.run_case("concat", op_tol, [](Rng& rng) {
    auto a = rand_tensor({2, 3}, rng);
    auto b = rand_tensor({2, 5}, rng);
    auto c = rand_tensor({2, 1}, rng);
    auto w = rand_tensor({2, 9}, rng, 0.2, 1.0);
    return max_rel_grad_error(
        [&] {
          std::vector<Tensor<double>> parts = {a, b, c};
          return wsum(concat(std::span<const Tensor<double>>(parts), 1), w);
        },
        {a, b, c});
  });

  suite.run_case("conv2d.s1p1", op_tol, [](Rng& rng) {
    auto x = rand_tensor({3, 8, 7}, rng);
    auto k = rand_tensor({4, 3, 3, 3}, rng);
    auto w = rand_tensor({4, 8, 7}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(conv2d(x, k, 1, 1), w); }, {x, k});
  });

  suite.run_case("conv2d.s2p0", op_tol, [](Rng& rng) {
    auto x = rand_tensor({2, 9, 8}, rng);
    auto k = rand_tensor({3, 2, 2, 2}, rng);
    auto w = rand_tensor({3, 4, 4}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(conv2d(x, k, 2, 0), w); }, {x, k});
  });

  suite.run_case("bilinear_sample", op_tol, [](Rng& rng) {
    auto map = rand_tensor({3, 6, 5}, rng);
    std::vector<double> c(10 * 2);
    for (std::size_t i = 0; i < 10; ++i) {
      c[i * 2] = rng.uniform(0.3, 3.4) + 0.13;  // interior, away from texel centers
      c[i * 2 + 1] = rng.uniform(0.3, 4.4) + 0.13;
    }
    Tensor<double> coords({10, 2}, std::move(c));
    auto w = rand_tensor({10, 3}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(bilinear_sample(map, coords), w); },
                              {map, coords});
  });

  suite.run_case("project_points", op_tol, [](Rng& rng) {
    std::vector<double> c(12 * 3);
    for (std::size_t i = 0; i < 12; ++i) {
      c[i * 3] = rng.uniform(-0.5, 0.5);
      c[i * 3 + 1] = rng.uniform(-0.5, 0.5);
      c[i * 3 + 2] = rng.uniform(1.2, 2.8);
    }
    Tensor<double> cloud({12, 3}, std::move(c));
    const CameraIntrinsics cam{14, 14, 8, 8, 1.0, 3.0};
    auto w = rand_tensor({12, 2}, rng, 0.2, 1.0);
    return max_rel_grad_error(
        [&] { return wsum(project_points(cloud, cam, 6, 6, 16, 16), w); }, {cloud});
  });

  suite.run_case("adain", op_tol, [](Rng& rng) {
    auto map = rand_tensor({4, 5, 6}, rng);
    auto y = rand_tensor({12, 4}, rng);
    auto w = rand_tensor({12, 4}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(adain_2d_to_3d(map, y), w); }, {map, y});
  });

  suite.run_case("graphx.dense", op_tol, [](Rng& rng) {
    Rng init = rng;
    auto gx = GraphX<double>::learned(6, 9, 5, 4, 0, Activation::kIdentity, init);
    auto f = rand_tensor({6, 5}, rng);
    auto w = rand_tensor({9, 4}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(gx.forward(f), w); },
                              {f, gx.mixing_weight, gx.mixing_bias, gx.transform, gx.bias});
  });

  suite.run_case("graphx.factored", op_tol, [](Rng& rng) {
    Rng init = rng;
    auto gx = GraphX<double>::learned(6, 4, 8, 5, 3, Activation::kRelu, init);
    auto f = rand_tensor({6, 8}, rng);
    auto w = rand_tensor({4, 5}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(gx.forward(f), w); },
                              {f, gx.mixing_weight, gx.mixing_bias, gx.w1, gx.w2, gx.bias});
  });

  suite.run_case("graphx.slim", op_tol, [](Rng& rng) {
    Rng init = rng;
    auto gx = GraphX<double>::slim(6, 9, 5, 4, 0, Activation::kIdentity, init);
    auto f = rand_tensor({6, 5}, rng);
    auto w = rand_tensor({9, 4}, rng, 0.2, 1.0);
    return max_rel_grad_error([&] { return wsum(gx.forward(f), w); },
                              {f, gx.gain, gx.shift, gx.transform, gx.bias});
  });

  suite.run_case("res_graphx.up", op_tol, [](Rng& rng) {
    Rng init = rng;
    auto block = ResGraphX<double>::make(5, 10, 4, 6, ResidualKind::kGraphX, 0, false, init);
    auto f = rand_tensor({5, 4}, rng);
    auto w = rand_tensor({10, 6}, rng, 0.2, 1.0);
    std::vector<Tensor<double>> inputs = {f};
    std::vector<NamedParam<double>> params;
    block.append_params("b", params);
    for (auto& p : params) inputs.push_back(p.tensor);
    return max_rel_grad_error([&] { return wsum(block.forward(f), w); }, inputs);
  });

  suite.run_case("chamfer", 1e-4, [](Rng& rng) {
    auto x = rand_tensor({20, 3}, rng);
    auto y = rand_tensor({30, 3}, rng);
    return max_rel_grad_error([&] { return chamfer(x, y, NNBackend::brute_force()); },
                              {x, y});
  });

  suite.run_case("l2_penalty", op_tol, [](Rng& rng) {
    auto a = rand_tensor({4, 3}, rng);
    auto b = rand_tensor({7}, rng);
    return max_rel_grad_error(
        [&] {
          std::vector<Tensor<double>> params = {a, b};
          return l2_penalty(std::span<const Tensor<double>>(params), 0.013);
        },
        {a, b});
  });

  {
    const double err = end_to_end_case(seed);
    suite.report.cases.push_back({"end_to_end.tiny", err, 1e-3, err < 1e-3});
  }

  return suite.report;
}

std::string to_text(const GradCheckReport& report) {
  std::ostringstream os;
  char buf[128];
  for (const auto& c : report.cases) {
    std::snprintf(buf, sizeof(buf), "[%s] %-18s max rel err %.3e (tol %.0e)\n",
                  c.pass ? "PASS" : "FAIL", c.name.c_str(), c.max_rel_err, c.tolerance);
    os << buf;
  }
  os << (report.all_pass() ? "gradcheck: all cases passed\n" : "gradcheck: FAILURES\n");
  return os.str();
}

}  // namespace pcdnet
