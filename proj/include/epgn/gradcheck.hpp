#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "epgn/rng.hpp"
#include "epgn/tensor.hpp"

namespace epgn {

// Scalar objective of a parameter list. It receives the tape the parameters
// live on (a fresh one per evaluation) and a copy of the same random stream
// each time, so dropout masks repeat across evaluations.
using ScalarObjective =
    std::function<Tensor(Tape& tape, std::span<const Tensor> params, RngStream rng)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Compares reverse-mode gradients with central differences on up to
// max_coords_per_param sampled coordinates of every parameter (all of them
// when fewer). Relative error is |g - fd| / max(1, |g|, |fd|).
GradCheckResult grad_check(const ScalarObjective& f, std::span<const Tensor> params, double eps,
                           std::uint64_t rng_seed, std::size_t max_coords_per_param = 50);

}  // namespace epgn
