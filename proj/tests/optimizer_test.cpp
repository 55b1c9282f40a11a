#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "checks.hpp"
#include "test_util.hpp"

using namespace fes;
using fes::testing::Quadratic;

TEST(InitParams, PaperConstants) {
  for (double v : init_params(1, 5)) EXPECT_DOUBLE_EQ(v, 1e-3);
  const auto two = init_params(2, 3);
  for (double v : two) EXPECT_NEAR(v, 0.0316228, 1e-7);
  EXPECT_NEAR(two[0] * two[1], 1e-3, 1e-15);
  EXPECT_THROW(init_params(3, 1), Error);
}

TEST(Minimize, IsotropicQuadratic) {
  Rng rng(1);
  std::vector<double> a(30);
  for (auto& v : a) v = rng.normal();
  auto f = [&](std::span<const double> x, std::span<double> g) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      g[i] = 2 * (x[i] - a[i]);
      s += (x[i] - a[i]) * (x[i] - a[i]);
    }
    return s;
  };
  std::vector<double> x0(30);
  for (auto& v : x0) v = 10 * rng.normal();
  const auto res = minimize(f, x0, OptimConfig{});
  EXPECT_LE(res.iterations, 20u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(res.params[i], a[i], 1e-8);
}

TEST(Minimize, RandomQuadraticsConverge) {
  Rng rng(2);
  for (std::size_t dim : {5u, 40u, 120u}) {
    Quadratic q(dim, rng, 0.5);
    std::vector<double> x0(dim, 0.0);
    const auto res = minimize(std::cref(q), x0, OptimConfig{});
    EXPECT_EQ(res.termination, Termination::GradientTolerance) << dim;
    EXPECT_LE(res.grad_inf_norm, 1e-8);
    EXPECT_LE(res.iterations, 200u);
  }
}

TEST(Minimize, LossNeverIncreases) {
  // Rosenbrock: non-convex, exercises the zoom phase.
  auto f = [](std::span<const double> x, std::span<double> g) {
    double s = 0.0;
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
      const double t = x[i + 1] - x[i] * x[i];
      const double u = 1 - x[i];
      s += 100 * t * t + u * u;
      g[i] += -400 * x[i] * t - 2 * u;
      g[i + 1] += 200 * t;
    }
    return s;
  };
  OptimConfig cfg;
  cfg.max_iterations = 500;
  const auto res = minimize(f, std::vector<double>(6, -1.2), cfg);
  for (std::size_t i = 1; i < res.loss_history.size(); ++i)
    ASSERT_LE(res.loss_history[i], res.loss_history[i - 1]);
  for (double v : res.params) EXPECT_NEAR(v, 1.0, 1e-4);
}

TEST(Minimize, BitwiseDeterministic) {
  Rng rng(3);
  Quadratic q(60, rng, 0.1);
  std::vector<double> x0(60);
  for (auto& v : x0) v = rng.normal();
  const auto a = minimize(std::cref(q), x0, OptimConfig{});
  const auto b = minimize(std::cref(q), x0, OptimConfig{});
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(Minimize, NonFiniteObjectiveAborts) {
  auto nan_at_start = [](std::span<const double>, std::span<double> g) {
    std::fill(g.begin(), g.end(), 0.0);
    return std::numeric_limits<double>::quiet_NaN();
  };
  try {
    minimize(nan_at_start, {1.0}, OptimConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
  }
  // Finite at the start, infinite once x leaves the unit interval.
  auto blows_up = [](std::span<const double> x, std::span<double> g) {
    g[0] = -1.0;
    return x[0] > 1.0 ? std::numeric_limits<double>::infinity() : -x[0];
  };
  EXPECT_THROW(minimize(blows_up, {0.5}, OptimConfig{}), Error);
}

TEST(Minimize, ConfigValidation) {
  OptimConfig bad;
  bad.wolfe_c1 = 0.95;
  EXPECT_THROW(bad.validate(), Error);
  bad = OptimConfig{};
  bad.grad_tol = 0.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Minimize, SeparableToyStackingProblem) {
  // Two classes, one extractor, one snapshot: the kernel is a single weight.
  const LogitTensor l({4, 1, 1, 2}, {1.0f, -1.0f, 2.0f, 0.0f, -1.0f, 1.0f, 0.0f, 1.5f});
  const std::uint32_t y[] = {0, 0, 1, 1};
  StackingObjective obj(l, y, {Method::Fes, 1e-2, 0, 0});
  const auto res = minimize([&](std::span<const double> x, std::span<double> g) { return obj(x, g); },
                            init_params(1, 1), OptimConfig{});
  EXPECT_LE(res.grad_inf_norm, 1e-6);

  // Fine grid over the weight.
  std::vector<double> g(1);
  double best_w = 0.0, best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 200000; ++i) {
    const double w[] = {i * 1e-4};
    const double v = obj(w, g);
    if (v < best) {
      best = v;
      best_w = w[0];
    }
  }
  EXPECT_NEAR(res.params[0], best_w, 2e-4);
  EXPECT_LE(res.loss, best + 1e-12);
}
