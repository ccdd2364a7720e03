#include <Eigen/Dense>
#include <cmath>
#include <cstdlib>
#include <vector>

#include "doctest.h"
#include "epgn/error.hpp"
#include "epgn/evaluator.hpp"
#include "helpers.hpp"

using namespace epgn;
using namespace epgn::ops;
using testing::error_kind;
using testing::random_matrix;

namespace {

PredictionTask task_of(Tensor prototypes, Distance metric) {
  PredictionTask t;
  for (std::size_t i = 0; i < prototypes.rows(); ++i) t.candidate_classes.push_back(10 + i);
  t.prototypes = std::move(prototypes);
  t.metric = metric;
  return t;
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
  std::vector<double> v(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);
  return Tensor::matrix(m.rows(), m.cols(), std::move(v));
}

// G is relu(relu(a)): prototypes equal the (nonnegative) attributes.
PgnModel identity_g_model(std::size_t n) {
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  PgnModel m;
  ArchitectureOptions a;
  a.hidden_f = a.hidden_d = 3;
  m = init_model(n, n, a, RngStream(1));
  m.g.layers.clear();
  m.g.layers.push_back({Tensor::matrix(n, n, eye), Tensor::zeros({n}), Activation::Relu, 0.0});
  m.g.layers.push_back({Tensor::matrix(n, n, eye), Tensor::zeros({n}), Activation::Relu, 0.0});
  return m;
}

// Classes (1,0), (0,1) seen and (1,1) unseen; instances sit on their class
// semantics unless moved.
Dataset three_class(const std::vector<std::vector<double>>& unseen_points) {
  Dataset ds;
  ds.attributes = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}});
  std::vector<double> x{1, 0, 1, 0, 0, 1, 0, 1};
  for (const auto& p : unseen_points) x.insert(x.end(), p.begin(), p.end());
  ds.features = Tensor::matrix(4 + unseen_points.size(), 2, x);
  ds.labels = {0, 0, 1, 1};
  for (std::size_t i = 0; i < unseen_points.size(); ++i) {
    ds.labels.push_back(2);
    ds.test_unseen_idx.push_back(4 + i);
  }
  ds.seen_classes = {0, 1};
  ds.unseen_classes = {2};
  ds.train_idx = {0, 2};
  ds.test_seen_idx = {1, 3};
  return ds;
}

}  // namespace

TEST_SUITE("evaluator") {

TEST_CASE("predict examples") {
  const PredictionTask t = task_of(Tensor::matrix({{1, 0}, {3, 0}}), Distance::Euclidean);
  CHECK(predict(t, Tensor::matrix({{0, 0}})) == std::vector<std::size_t>{10});
  CHECK(predict(t, Tensor::matrix({{3, 0}})) == std::vector<std::size_t>{11});
  // Equidistant: lowest candidate index.
  CHECK(predict(t, Tensor::matrix({{2, 0}})) == std::vector<std::size_t>{10});

  PredictionTask empty;
  empty.prototypes = Tensor::zeros({0, 2});
  CHECK(error_kind([&] { predict(empty, Tensor::matrix({{0, 0}})); }) == ErrorKind::EmptyClassSet);
}

TEST_CASE("build_task keeps candidate order and duplicates") {
  const PgnModel m = identity_g_model(2);
  const Tensor attrs = Tensor::matrix({{0.2, 0.4}, {0.9, 0.1}, {0.2, 0.4}});
  const PredictionTask t = build_task(m, attrs, {2, 1, 0}, Distance::Cosine);
  CHECK(t.candidate_classes == std::vector<std::size_t>{2, 1, 0});
  REQUIRE(t.prototypes.shape() == Shape{3, 2});
  CHECK(t.prototypes.at(1, 0) == 0.9);
  CHECK(t.prototypes.at(0, 0) == t.prototypes.at(2, 0));
  CHECK(t.prototypes.at(0, 1) == t.prototypes.at(2, 1));
  CHECK(error_kind([&] { build_task(m, attrs, {3}, Distance::Cosine); }) == ErrorKind::Data);

  ArchitectureOptions a;
  a.hidden_f = a.hidden_g = a.hidden_d = 4;
  const PgnModel wide = init_model(2048, 85, a, RngStream(2));
  RngStream rng(3);
  const Tensor sem = random_matrix(10, 85, rng, 0.0, 1.0);
  const PredictionTask big = build_task(wide, sem, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, Distance::Euclidean);
  CHECK(big.prototypes.shape() == Shape{10, 2048});
}

TEST_CASE("euclidean predictions survive a shared rotation") {
  RngStream rng(71);
  const std::size_t d = 6;
  const Tensor protos = random_matrix(7, d, rng);
  const Tensor x = random_matrix(500, d, rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(to_eigen(random_matrix(d, d, rng)))
                                .householderQ();
  CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(d, d)).norm() < 1e-12);
  const auto before = predict(task_of(protos, Distance::Euclidean), x);
  const auto after = predict(task_of(from_eigen(to_eigen(protos) * q), Distance::Euclidean),
                             from_eigen(to_eigen(x) * q));
  CHECK(before == after);
}

TEST_CASE("positive scaling leaves euclidean predictions unchanged") {
  RngStream rng(72);
  const Tensor protos = random_matrix(5, 4, rng);
  const Tensor x = random_matrix(300, 4, rng);
  const auto base = predict(task_of(protos, Distance::Euclidean), x);
  for (double c : {0.25, 3.0, 1000.0}) {
    CHECK(predict(task_of(scale(protos, c), Distance::Euclidean), scale(x, c)) == base);
  }
}

TEST_CASE("predict agrees with the distance softmax mode") {
  RngStream rng(73);
  for (Distance metric : {Distance::Euclidean, Distance::Cosine}) {
    const Tensor protos = random_matrix(6, 5, rng);
    const Tensor x = random_matrix(1000, 5, rng);
    const PredictionTask t = task_of(protos, metric);
    const auto pred = predict(t, x);
    const Tensor p = softmax_rows(scale(pairwise_distance(x, protos, metric), -1.0));
    for (std::size_t i = 0; i < 1000; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < 6; ++j)
        if (p.at(i, j) > p.at(i, best)) best = j;
      CHECK(pred[i] == 10 + best);
    }
  }
}

TEST_CASE("per-class top-1 examples") {
  CHECK(per_class_top1({1, 2, 2}, {1, 2, 2}, {1, 2}).mean == 1.0);
  CHECK(per_class_top1({2, 1, 1}, {1, 2, 2}, {1, 2}).mean == 0.0);

  // 10 instances all right, 1000 all wrong: class balanced, not 10/1010.
  std::vector<std::size_t> labels(10, 0), preds(10, 0);
  labels.insert(labels.end(), 1000, 1);
  preds.insert(preds.end(), 1000, 0);
  const auto r = per_class_top1(preds, labels, {0, 1});
  double direct = 0;
  for (std::size_t c : {0u, 1u}) {
    double hit = 0, n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) {
        n += 1;
        hit += preds[i] == c;
      }
    direct += hit / n;
  }
  CHECK(r.mean == direct / 2);
  CHECK(r.mean == 0.5);
  CHECK(r.per_class.at(0) == 1.0);

  // A class without instances is left out of the mean.
  CHECK(per_class_top1({0}, {0}, {0, 5}).mean == 1.0);
  CHECK(error_kind([&] { per_class_top1({}, {}, {0}); }) == ErrorKind::Data);
}

TEST_CASE("per-class top-1 ignores duplicating one class") {
  RngStream rng(74);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> labels, preds;
    for (int i = 0; i < 60; ++i) {
      labels.push_back(rng.below(4));
      preds.push_back(rng.below(4));
    }
    const double base = per_class_top1(preds, labels, {0, 1, 2, 3}).mean;
    const std::size_t c = rng.below(4);
    auto l2 = labels;
    auto p2 = preds;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) {
        l2.push_back(labels[i]);
        p2.push_back(preds[i]);
      }
    CHECK(per_class_top1(p2, l2, {0, 1, 2, 3}).mean == doctest::Approx(base).epsilon(1e-15));
  }
}

TEST_CASE("harmonic mean examples and bounds") {
  CHECK(std::abs(harmonic_mean(0.621, 0.834) - 0.712) <= 0.0005);
  CHECK(std::abs(harmonic_mean(0.715, 0.822) - 0.765) <= 0.0005);
  CHECK(harmonic_mean(0.0, 0.7) == 0.0);
  CHECK(harmonic_mean(0.0, 0.0) == 0.0);
  RngStream rng(75);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform(), s = rng.uniform();
    CHECK(harmonic_mean(u, u) == doctest::Approx(u).epsilon(1e-15));
    const double h = harmonic_mean(u, s);
    CHECK(h >= std::min(u, s) - 1e-15);
    CHECK(h <= std::max(u, s) + 1e-15);
  }
}

TEST_CASE("zsl and gzsl on a perfect model") {
  const PgnModel m = identity_g_model(2);
  const Dataset ds = three_class({{1, 1}, {1, 1}});
  const Metrics z = zsl_eval(m, ds, Distance::Euclidean);
  CHECK(z.T == 1.0);
  const Metrics g = gzsl_eval(m, ds, Distance::Euclidean);
  CHECK(g.u == 1.0);
  CHECK(g.s == 1.0);
  CHECK(g.H == 1.0);
}

TEST_CASE("gzsl classification shift") {
  const PgnModel m = identity_g_model(2);
  // Unseen instances sit on seen class semantics.
  const Dataset ds = three_class({{1, 0}, {0, 1}});
  const Metrics g = gzsl_eval(m, ds, Distance::Euclidean);
  CHECK(g.u == 0.0);
  CHECK(g.s == 1.0);
  CHECK(g.H == 0.0);

  Dataset no_seen_test = ds;
  no_seen_test.test_seen_idx.clear();
  CHECK(error_kind([&] { gzsl_eval(m, no_seen_test, Distance::Euclidean); }) == ErrorKind::Data);
  Dataset no_unseen_test = three_class({});
  CHECK(error_kind([&] { zsl_eval(m, no_unseen_test, Distance::Euclidean); }) == ErrorKind::Data);
}

TEST_CASE("thread count does not change predictions") {
  RngStream rng(76);
  const PredictionTask t = task_of(random_matrix(9, 5, rng), Distance::Cosine);
  const Tensor x = random_matrix(3000, 5, rng);
  ::setenv("EPGN_THREADS", "1", 1);
  CHECK(evaluator_threads() == 1);
  const auto one = predict(t, x);
  ::setenv("EPGN_THREADS", "4", 1);
  CHECK(evaluator_threads() == 4);
  const auto four = predict(t, x);
  ::unsetenv("EPGN_THREADS");
  CHECK(one == four);
}

}  // TEST_SUITE
