#include <cmath>
#include <vector>

#include "doctest.h"
#include "epgn/error.hpp"
#include "epgn/optim.hpp"
#include "helpers.hpp"

using namespace epgn;

TEST_SUITE("optim") {

TEST_CASE("zero gradient leaves parameters and bumps the step") {
  std::vector<Tensor> p{Tensor::vector({1.0, -2.0})};
  const std::vector<Tensor> g{Tensor::vector({0.0, 0.0})};
  AdamState s;
  adam_step(p, g, s, 0.1);
  CHECK(s.step == 1);
  CHECK(testing::to_vec(p[0]) == std::vector<double>{1.0, -2.0});
  adam_step(p, g, s, 0.1);
  CHECK(s.step == 2);
}

TEST_CASE("first step moves each coordinate by about lr against the gradient") {
  const double lr = 1e-3;
  std::vector<Tensor> p{Tensor::vector({0.5, 0.5, 0.5})};
  const std::vector<Tensor> g{Tensor::vector({3.0, -0.01, 250.0})};
  AdamState s;
  adam_step(p, g, s, lr);
  // t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
  for (std::size_t i = 0; i < 3; ++i) {
    const double gi = g[0][i];
    const double expected = 0.5 - lr * gi / (std::abs(gi) + 1e-8);
    CHECK(p[0][i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("two steps match the textbook formulas") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double g1 = 0.4, g2 = -1.3;
  double m = 0, v = 0, x = 1.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? g1 : g2;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  std::vector<Tensor> p{Tensor::scalar(1.0)};
  AdamState s;
  adam_step(p, std::vector<Tensor>{Tensor::scalar(g1)}, s, lr);
  adam_step(p, std::vector<Tensor>{Tensor::scalar(g2)}, s, lr);
  CHECK(p[0].item() == doctest::Approx(x).epsilon(1e-13));
}

TEST_CASE("identical states give identical results") {
  std::vector<Tensor> p1{Tensor::vector({1, 2, 3})}, p2 = p1;
  const std::vector<Tensor> g{Tensor::vector({0.1, -0.2, 0.3})};
  AdamState s1, s2;
  adam_step(p1, g, s1, 0.01);
  adam_step(p2, g, s2, 0.01);
  CHECK(bitwise_equal(p1[0], p2[0]));
}

TEST_CASE("minimizes a quadratic") {
  std::vector<Tensor> p{Tensor::vector({3.0, -4.0})};
  AdamState s;
  for (int i = 0; i < 2000; ++i) {
    const std::vector<Tensor> g{ops::scale(p[0], 2.0)};
    adam_step(p, g, s, 0.05);
  }
  CHECK(std::abs(p[0][0]) < 1e-2);
  CHECK(std::abs(p[0][1]) < 1e-2);
}

TEST_CASE("shape and lr errors") {
  std::vector<Tensor> p{Tensor::vector({1.0, 2.0})};
  AdamState s;
  CHECK_THROWS_AS(adam_step(p, std::vector<Tensor>{Tensor::vector({1.0})}, s, 0.1), Error);
  CHECK_THROWS_AS(adam_step(p, std::vector<Tensor>{}, s, 0.1), Error);
  CHECK_THROWS_AS(adam_step(p, std::vector<Tensor>{Tensor::vector({1.0, 1.0})}, s, 0.0), Error);
  try {
    adam_step(p, std::vector<Tensor>{Tensor::vector({1.0})}, s, 0.1);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
  }
}

}
