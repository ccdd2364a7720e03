#include "epgn/evaluator.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "epgn/error.hpp"

namespace epgn {

Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& rows) {
  const std::size_t c = m.cols();
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (std::size_t r : rows) {
    if (r >= m.rows()) throw Error(ErrorKind::Data, "row " + std::to_string(r) + " out of range");
    const auto row = m.values().subspan(r * c, c);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor::matrix(rows.size(), c, std::move(out));
}

PredictionTask build_task(const PgnModel& model, const Tensor& attributes,
                          const std::vector<std::size_t>& candidates, Distance metric) {
  for (std::size_t c : candidates) {
    if (c >= attributes.rows()) {
      throw Error(ErrorKind::Data, "candidate class " + std::to_string(c) + " has no semantics row");
    }
  }
  PredictionTask task;
  task.candidate_classes = candidates;
  task.metric = metric;
  if (!candidates.empty()) {
    task.prototypes = g_forward(model, gather_rows(attributes, candidates), Mode::Eval, nullptr);
  } else {
    task.prototypes = Tensor::zeros({0, model.feature_dim});
  }
  return task;
}

std::size_t evaluator_threads() {
  if (const char* env = std::getenv("EPGN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<std::size_t> predict(const PredictionTask& task, const Tensor& x) {
  if (task.candidate_classes.empty()) throw Error(ErrorKind::EmptyClassSet, "predict needs candidates");
  if (x.rank() != 2 || x.cols() != task.prototypes.cols()) {
    throw Error(ErrorKind::Dimension, "predict: feature width does not match the prototypes");
  }
  const std::size_t n = x.rows();
  std::vector<std::size_t> out(n);
  const auto work = [&](std::size_t begin, std::size_t end) {
    if (begin >= end) return;
    std::vector<std::size_t> rows(end - begin);
    for (std::size_t i = begin; i < end; ++i) rows[i - begin] = i;
    const Tensor d = pairwise_distance(gather_rows(x, rows), task.prototypes, task.metric);
    const std::size_t r = d.cols();
    for (std::size_t i = begin; i < end; ++i) {
      const double* row = d.data() + (i - begin) * r;
      // min_element returns the first minimum: lowest index wins ties.
      out[i] = task.candidate_classes[static_cast<std::size_t>(std::min_element(row, row + r) - row)];
    }
  };
  const std::size_t threads = std::min(evaluator_threads(), std::max<std::size_t>(1, n / 256));
  if (threads <= 1) {
    work(0, n);
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back(work, t * chunk, std::min(n, (t + 1) * chunk));
  }
  for (auto& th : pool) th.join();
  return out;
}

PerClassAccuracy per_class_top1(const std::vector<std::size_t>& predictions,
                                const std::vector<std::size_t>& labels,
                                const std::vector<std::size_t>& classes) {
  if (labels.empty()) throw Error(ErrorKind::Data, "per_class_top1: empty test set");
  if (predictions.size() != labels.size()) throw Error(ErrorKind::Batch, "per_class_top1: size mismatch");
  if (classes.empty()) throw Error(ErrorKind::Data, "per_class_top1: no classes");
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> tally;  // class -> (correct, total)
  for (std::size_t c : classes) tally[c] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = tally.find(labels[i]);
    if (it == tally.end()) {
      throw Error(ErrorKind::LabelRange, "label " + std::to_string(labels[i]) + " is not an evaluated class");
    }
    it->second.second += 1;
    if (predictions[i] == labels[i]) it->second.first += 1;
  }
  PerClassAccuracy result;
  double total = 0.0;
  for (const auto& [c, counts] : tally) {
    if (counts.second == 0) continue;
    const double acc = static_cast<double>(counts.first) / static_cast<double>(counts.second);
    result.per_class[c] = acc;
    total += acc;
  }
  result.mean = total / static_cast<double>(result.per_class.size());
  return result;
}

double harmonic_mean(double u, double s) {
  const double denom = u + s;
  return denom > 0.0 ? 2.0 * u * s / denom : 0.0;
}

namespace {

std::vector<std::size_t> labels_of(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.labels[i]);
  return out;
}

void check_model_fits(const PgnModel& model, const Dataset& ds) {
  if (model.feature_dim != ds.feature_dim() || model.semantic_dim != ds.semantic_dim()) {
    throw Error(ErrorKind::Dimension, "model dims (" + std::to_string(model.feature_dim) + ", " +
                                          std::to_string(model.semantic_dim) + ") do not match dataset (" +
                                          std::to_string(ds.feature_dim()) + ", " +
                                          std::to_string(ds.semantic_dim()) + ")");
  }
}

}  // namespace

Metrics zsl_eval(const PgnModel& model, const Dataset& ds, Distance metric) {
  check_model_fits(model, ds);
  if (ds.test_unseen_idx.empty()) throw Error(ErrorKind::Data, "dataset has no test_unseen instances");
  const PredictionTask task = build_task(model, ds.attributes, ds.unseen_classes, metric);
  const auto preds = predict(task, gather_rows(ds.features, ds.test_unseen_idx));
  const auto acc = per_class_top1(preds, labels_of(ds, ds.test_unseen_idx), ds.unseen_classes);
  Metrics m;
  m.T = acc.mean;
  m.per_class_acc = acc.per_class;
  return m;
}

Metrics gzsl_eval(const PgnModel& model, const Dataset& ds, Distance metric) {
  check_model_fits(model, ds);
  if (ds.test_unseen_idx.empty() || ds.test_seen_idx.empty()) {
    throw Error(ErrorKind::Data, "generalized evaluation needs test_seen and test_unseen instances");
  }
  std::vector<std::size_t> all = ds.seen_classes;
  all.insert(all.end(), ds.unseen_classes.begin(), ds.unseen_classes.end());
  const PredictionTask task = build_task(model, ds.attributes, all, metric);
  const auto unseen_preds = predict(task, gather_rows(ds.features, ds.test_unseen_idx));
  const auto seen_preds = predict(task, gather_rows(ds.features, ds.test_seen_idx));
  const auto u = per_class_top1(unseen_preds, labels_of(ds, ds.test_unseen_idx), ds.unseen_classes);
  const auto s = per_class_top1(seen_preds, labels_of(ds, ds.test_seen_idx), ds.seen_classes);
  Metrics m;
  m.u = u.mean;
  m.s = s.mean;
  m.H = harmonic_mean(m.u, m.s);
  m.per_class_acc = u.per_class;
  m.per_class_acc.insert(s.per_class.begin(), s.per_class.end());
  return m;
}

}  // namespace epgn
