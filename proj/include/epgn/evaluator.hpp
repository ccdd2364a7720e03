#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "epgn/dataio.hpp"
#include "epgn/losses.hpp"
#include "epgn/networks.hpp"

namespace epgn {

struct Metrics {
  double T = 0.0;
  double u = 0.0;
  double s = 0.0;
  double H = 0.0;
  std::map<std::size_t, double> per_class_acc;
};

struct PredictionTask {
  std::vector<std::size_t> candidate_classes;
  Tensor prototypes;  // one row per candidate, G applied in eval mode
  Distance metric = Distance::Euclidean;
};

PredictionTask build_task(const PgnModel& model, const Tensor& attributes,
                          const std::vector<std::size_t>& candidates, Distance metric);

// Nearest prototype under the task metric; ties go to the lowest candidate
// index. Rows are split across worker threads (see evaluator_threads()).
std::vector<std::size_t> predict(const PredictionTask& task, const Tensor& x);

struct PerClassAccuracy {
  double mean = 0.0;
  std::map<std::size_t, double> per_class;
};

// Mean over classes of per-class top-1 accuracy; classes without instances
// are left out.
PerClassAccuracy per_class_top1(const std::vector<std::size_t>& predictions,
                                const std::vector<std::size_t>& labels,
                                const std::vector<std::size_t>& classes);

// 2us/(u+s), or 0 when u + s == 0.
double harmonic_mean(double u, double s);

// Traditional ZSL: test-unseen instances against unseen candidates only.
Metrics zsl_eval(const PgnModel& model, const Dataset& ds, Distance metric);
// Generalized ZSL: both test splits against all seen and unseen candidates.
Metrics gzsl_eval(const PgnModel& model, const Dataset& ds, Distance metric);

// Rows of the given instance indices as a matrix.
Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& rows);

// Worker count for prediction: EPGN_THREADS if set, else hardware concurrency.
std::size_t evaluator_threads();


}  // namespace epgn
