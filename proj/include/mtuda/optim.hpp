#pragma once

// Parameter updates. Both optimizers skip tensors that carry no gradient, so a
// head that no loss touched keeps its value and its buffers bit-for-bit.

#include <cstdint>
#include <vector>

#include "mtuda/tensor.hpp"

namespace mtuda {

struct SgdState {
  std::vector<std::vector<double>> velocity;  // one per parameter, empty until first touched
};

/// v <- momentum*v + (g + wd*p);  p <- p - lr*v.
void sgd_step(const std::vector<Tensor*>& params, SgdState& state, double lr, double momentum, double weight_decay);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam: m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
/// p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
void adam_step(const std::vector<Tensor*>& params, AdamState& state, double lr);

void zero_grads(const std::vector<Tensor*>& params);

}  // namespace mtuda
