#pragma once

#include <cstdint>
#include <vector>

#include "rvt/tensor.hpp"

namespace rvt {

// In-place SGD update p -= lr * p.grad over leaf parameters, then zeroes the
// grads unless told otherwise. lr == 0 must leave values bit-identical.
void sgd_step(const std::vector<Tensor>& params, double lr, bool zero_grads = true);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. State is keyed by position in the parameter
// list, which therefore must be stable across steps.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<Tensor>& params, bool zero_grads = true);

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace rvt
