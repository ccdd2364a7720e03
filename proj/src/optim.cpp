#include "epgn/optim.hpp"

#include <cmath>

#include "epgn/error.hpp"
#include "epgn/kernels.hpp"

namespace epgn {

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size()) {
    throw Error(ErrorKind::Dimension, "adam_step: parameter and gradient counts differ");
  }
  if (!(lr > 0.0)) throw Error(ErrorKind::Contract, "adam_step: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw Error(ErrorKind::Dimension, "adam_step: optimizer state tracks a different parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || state.first_moment[i].size() != params[i].size()) {
      throw Error(ErrorKind::Dimension, "adam_step: shape mismatch for parameter " +
                                            std::to_string(i) + " " +
                                            shape_string(params[i].shape()) + " vs gradient " +
                                            shape_string(grads[i].shape()));
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double step_size = lr / (1.0 - std::pow(state.beta1, t));
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  const auto& kt = kernels::active();
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> updated(params[i].values().begin(), params[i].values().end());
    kt.adam(updated.size(), updated.data(), grads[i].data(), state.first_moment[i].data(),
            state.second_moment[i].data(), state.beta1, state.beta2, step_size, bias2, state.eps);
    params[i] = Tensor(params[i].shape(), std::move(updated));
  }
}

}  // namespace epgn
