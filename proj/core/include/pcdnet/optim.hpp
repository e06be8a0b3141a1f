#pragma once

#include <cstdint>
#include <vector>

#include "pcdnet/tensor.hpp"

namespace pcdnet {

// Adam with bias correction. Parameters with an empty grad buffer are treated
// as having zero gradient; a zero gradient never moves a parameter.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::uint64_t steps_taken() const { return t_; }

  const std::vector<Tensor<T>>& params() const { return params_; }
  const std::vector<std::vector<T>>& moment1() const { return m_; }
  const std::vector<std::vector<T>>& moment2() const { return v_; }
  void set_state(std::uint64_t t, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v);

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
};

}  // namespace pcdnet
