#pragma once

// Independent reference implementations used as oracles by both the unit
// tests and the acceptance suite. Everything here is written as plain loops,
// straight from the definitions, and never calls the library kernels.

#include <limits>
#include <vector>

#include "pcdnet/layers.hpp"
#include "pcdnet/tensor.hpp"

namespace pcdnet::testing {

// Literal per-point mixing + shared transform:
// out_k = h(W^T (sum_i w_ik f_i + b_k 1) + b).
inline Tensor<double> graphx_oracle(const GraphX<double>& g, const Tensor<double>& f) {
  const std::size_t n_in = g.n_in, n_out = g.n_out, d_in = g.d_in, d_out = g.d_out;
  std::vector<double> w(d_in * d_out, 0.0);
  if (g.factored) {
    const std::size_t k = g.w1.extent(1);
    for (std::size_t i = 0; i < d_in; ++i) {
      for (std::size_t j = 0; j < d_out; ++j) {
        double acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += g.w1.at({i, p}) * g.w2.at({p, j});
        w[i * d_out + j] = acc;
      }
    }
  } else {
    for (std::size_t i = 0; i < d_in * d_out; ++i) w[i] = g.transform.values()[i];
  }

  Tensor<double> out({n_out, d_out});
  auto o = out.values_mut();
  for (std::size_t k_out = 0; k_out < n_out; ++k_out) {
    std::vector<double> mixed(d_in, 0.0);
    for (std::size_t i = 0; i < n_in; ++i) {
      const double wik = g.mixing_weight.at({k_out, i});
      for (std::size_t d = 0; d < d_in; ++d) mixed[d] += wik * f.at({i, d});
    }
    const double bk = g.mixing_bias.values()[k_out];
    for (std::size_t d = 0; d < d_in; ++d) mixed[d] += bk;  // scalar over all dims
    for (std::size_t j = 0; j < d_out; ++j) {
      double acc = g.bias.values()[j];
      for (std::size_t d = 0; d < d_in; ++d) acc += mixed[d] * w[d * d_out + j];
      o[k_out * d_out + j] = g.act == Activation::kRelu ? std::max(acc, 0.0) : acc;
    }
  }
  return out;
}

// Brute-force O(NM) Chamfer distance from the definition.
template <typename T>
double chamfer_oracle(const Tensor<T>& x, const Tensor<T>& y) {
  const std::size_t n = x.extent(0), m = y.extent(0);
  double first = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      double d = 0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double diff = static_cast<double>(x.at({i, a})) - y.at({j, a});
        d += diff * diff;
      }
      best = std::min(best, d);
    }
    first += best;
  }
  double second = 0;
  for (std::size_t j = 0; j < m; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double diff = static_cast<double>(y.at({j, a})) - x.at({i, a});
        d += diff * diff;
      }
      best = std::min(best, d);
    }
    second += best;
  }
  return first / static_cast<double>(n) + second / static_cast<double>(m);
}

}  // namespace pcdnet::testing
