#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "epgn/tensor.hpp"

namespace epgn {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// One bias-corrected Adam update. Parameters are replaced by new constant
// tensors; moment buffers are created on the first call.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, double lr);

}  // namespace epgn
