#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace epgn {

struct LossCheck {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

struct SuiteOptions {
  std::uint64_t seed = 1;
  bool fault_flip_a2v = false;  // only honoured in fault-injection builds
};

// Gradient checks for every training loss on small random networks whose
// sizes are drawn from the seed. Terms that differentiate through the
// critic's input gradient get the looser tolerance.
std::vector<LossCheck> run_gradcheck_suite(const SuiteOptions& opts);

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kSecondOrderTolerance = 1e-3;

}  // namespace epgn
