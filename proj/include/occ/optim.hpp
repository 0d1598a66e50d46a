#pragma once

#include <cstdint>
#include <vector>

#include "occ/tensor.hpp"

namespace occ {

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

// Decoupled weight decay Adam. Moment buffers are keyed by parameter order,
// which must stay fixed across steps (as it does for a fixed model).
struct AdamW {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int64_t step_count = 0;

  std::vector<std::vector<double>> m, v;

  void step(std::vector<Tensor>& params);
  void zero_grad(std::vector<Tensor>& params);
};

}  // namespace occ
