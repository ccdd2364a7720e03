#include <cmath>
#include <vector>

#include "doctest.h"
#include "epgn/error.hpp"
#include "epgn/gradcheck.hpp"
#include "epgn/gradcheck_suite.hpp"
#include "epgn/losses.hpp"
#include "helpers.hpp"

using namespace epgn;

TEST_SUITE("gradcheck") {

TEST_CASE("sum of squares") {
  RngStream rng(1);
  const std::vector<Tensor> w{testing::random_matrix(6, 7, rng)};
  const ScalarObjective f = [](Tape&, std::span<const Tensor> p, RngStream) {
    return ops::sum(ops::square(p[0]));
  };
  const auto r = grad_check(f, w, 1e-5, 3);
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.coordinates == 42);
}

TEST_CASE("samples at most the coordinate budget per tensor") {
  RngStream rng(2);
  const std::vector<Tensor> w{testing::random_matrix(20, 20, rng), testing::random_matrix(1, 3, rng)};
  const ScalarObjective f = [](Tape&, std::span<const Tensor> p, RngStream) {
    return ops::add(ops::sum(ops::square(p[0])), ops::sum(p[1]));
  };
  CHECK(grad_check(f, w, 1e-5, 1).coordinates == 53);
}

TEST_CASE("a wrong gradient is caught") {
  RngStream rng(3);
  const std::vector<Tensor> w{testing::random_matrix(3, 3, rng)};
  const ScalarObjective f = [](Tape&, std::span<const Tensor> p, RngStream) {
    return ops::sum(ops::square(ops::grad_flip(p[0])));
  };
  CHECK(grad_check(f, w, 1e-5, 1).max_rel_error > 0.1);
}

TEST_CASE("three-class MCE toy") {
  RngStream rng(4);
  ArchitectureOptions arch;
  arch.hidden_f = arch.hidden_g = arch.hidden_d = 5;
  const PgnModel model = init_model(4, 3, arch, rng.split("init"));
  const Batch b = make_batch(testing::random_matrix(4, 4, rng, 0, 1), {0, 1, 2, 1},
                             testing::random_matrix(3, 3, rng, 0, 1));
  const ScalarObjective f = [&](Tape&, std::span<const Tensor> p, RngStream) {
    PgnModel m = model;
    for (std::size_t i = 0; i < m.g.layers.size(); ++i) {
      m.g.layers[i].weight = p[2 * i];
      m.g.layers[i].bias = p[2 * i + 1];
    }
    return mce_loss(m, b, Mode::Eval, nullptr, Reduction::Sum);
  };
  CHECK(grad_check(f, model.g.parameters(), 1e-6, 5).max_rel_error < 1e-4);
}

TEST_CASE("eps contract and non-finite objectives") {
  const std::vector<Tensor> w{Tensor::vector({1.0})};
  const ScalarObjective f = [](Tape&, std::span<const Tensor> p, RngStream) { return ops::sum(p[0]); };
  CHECK_THROWS_AS(grad_check(f, w, 0.0, 1), Error);
  CHECK_THROWS_AS(grad_check(f, w, 0.1, 1), Error);
  const ScalarObjective bad = [](Tape&, std::span<const Tensor>, RngStream) {
    return ops::log(Tensor::scalar(0.0));
  };
  try {
    grad_check(bad, w, 1e-5, 1);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
  }
}

TEST_CASE("suite passes for 20 seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& c : run_gradcheck_suite({seed, false})) {
      INFO("seed " << seed << " " << c.name << " " << c.max_rel_error);
      CHECK(c.passed);
    }
  }
}

#ifdef EPGN_FAULT_INJECTION
TEST_CASE("suite catches the a2v sign fault") {
  bool caught = false;
  for (const auto& c : run_gradcheck_suite({1, true})) {
    if (c.name == "a2v") caught = !c.passed;
  }
  CHECK(caught);
}
#endif

}
