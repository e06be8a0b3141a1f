#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pcdnet/rng.hpp"
#include "pcdnet/tensor.hpp"

namespace pcdnet {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0;
  double tolerance = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  bool all_pass() const;
};

// Central finite-difference check. `loss` must rebuild a scalar from the
// current values of `inputs` on every call; every input is probed (or a
// random subset of max_probes_per_input elements when nonzero). Returns the
// maximum relative error between the analytic and numeric gradients.
double max_rel_grad_error(const std::function<Tensor<double>()>& loss,
                          std::vector<Tensor<double>> inputs, double fd_step = 1e-5,
                          std::size_t max_probes_per_input = 0, Rng* probe_rng = nullptr);

// The full suite: every differentiable op on repeated random f64 inputs plus
// an end-to-end tiny model. Deterministic for a fixed seed.
GradCheckReport run_gradcheck(std::uint64_t seed = 0);

std::string to_text(const GradCheckReport& report);

}  // namespace pcdnet
