#include "epgn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "epgn/error.hpp"

namespace epgn {

namespace {

double evaluate(const ScalarObjective& f, const std::vector<Tensor>& params, const RngStream& rng) {
  Tape tape;
  std::vector<Tensor> bound;
  bound.reserve(params.size());
  for (const Tensor& p : params) bound.push_back(tape.leaf(p));
  const double value = f(tape, bound, rng).item();
  if (!std::isfinite(value)) throw Error(ErrorKind::Numeric, "grad_check objective is not finite");
  return value;
}

}  // namespace

GradCheckResult grad_check(const ScalarObjective& f, std::span<const Tensor> params, double eps,
                           std::uint64_t rng_seed, std::size_t max_coords_per_param) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw Error(ErrorKind::Contract, "grad_check eps must be in (0, 1e-2]");
  const RngStream root(rng_seed);
  const RngStream objective_rng = root.split("objective");
  RngStream coord_rng = root.split("coordinates");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Tensor> bound;
    for (const Tensor& p : params) bound.push_back(tape.leaf(p));
    const Tensor out = f(tape, bound, objective_rng);
    if (!std::isfinite(out.item())) throw Error(ErrorKind::Numeric, "grad_check objective is not finite");
    analytic = tape.backward(out, bound);
  }

  GradCheckResult result;
  std::vector<Tensor> work(params.begin(), params.end());
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::size_t n = params[pi].size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > max_coords_per_param) {
      coord_rng.shuffle(coords);
      coords.resize(max_coords_per_param);
    }
    const std::vector<double> base(params[pi].values().begin(), params[pi].values().end());
    for (std::size_t c : coords) {
      std::vector<double> shifted = base;
      shifted[c] = base[c] + eps;
      work[pi] = Tensor(params[pi].shape(), shifted);
      const double plus = evaluate(f, work, objective_rng);
      shifted[c] = base[c] - eps;
      work[pi] = Tensor(params[pi].shape(), shifted);
      const double minus = evaluate(f, work, objective_rng);
      const double numeric = (plus - minus) / (2.0 * eps);
      const double exact = analytic[pi][c];
      const double denom = std::max({1.0, std::abs(exact), std::abs(numeric)});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(exact - numeric) / denom);
      ++result.coordinates;
    }
    work[pi] = params[pi];
  }
  return result;
}

}  // namespace epgn
