#include <gtest/gtest.h>

#include <numbers>
#include <random>
#include <sstream>

#include "pwlc/dynamics.hpp"

using namespace pwlc;
using dynamics::PlantSpec;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Vec u1(double a) { return Vec::Constant(1, a); }

Vec integrate(const PlantSpec& plant, Vec x, double h, double T) {
  const long steps = std::lround(T / h);
  for (long k = 0; k < steps; ++k) x = dynamics::rk4_step(plant, x, u1(0.0), h);
  return x;
}

dynamics::Controller zero_input(int m) {
  return [m](const Vec&) { return Vec::Zero(m); };
}

}  // namespace

TEST(Pendulum, EvaluatesClosedForm) {
  const auto p = dynamics::pendulum();
  EXPECT_LT(dynamics::eval_dynamics(p, v2(0, 0), u1(0)).norm(), 1e-15);
  EXPECT_LT((dynamics::eval_dynamics(p, v2(std::numbers::pi / 2, 0), u1(0)) - v2(0, 9.81 / 0.5)).norm(), 1e-12);
  EXPECT_LT((dynamics::eval_dynamics(p, v2(0, 1), u1(0)) - v2(1, -0.1 / (0.15 * 0.25))).norm(), 1e-12);
  // Input enters the second component with gain 1 / (m L^2).
  EXPECT_NEAR(dynamics::eval_dynamics(p, v2(0, 0), u1(1.5))[1], 1.5 / 0.0375, 1e-12);
}

TEST(Pendulum, RejectsOutOfDomainArguments) {
  const auto p = dynamics::pendulum();
  EXPECT_THROW(dynamics::eval_dynamics(p, v2(100, 0), u1(0)), DomainError);
  EXPECT_THROW(dynamics::eval_dynamics(p, v2(0, 0), u1(7)), DomainError);
  EXPECT_THROW(dynamics::eval_dynamics(p, Vec::Zero(3), u1(0)), DomainError);
}

TEST(Measurement, ZeroToleranceIsExact) {
  auto p = dynamics::pendulum();
  p.meas_tol = 0.0;
  const Vec x = v2(1, 1), u = u1(0.5);
  EXPECT_EQ(dynamics::measure_derivative(p, x, u, 3u), dynamics::eval_dynamics(p, x, u));
}

TEST(Measurement, MultiplicativeEnvelopeHolds) {
  auto p = dynamics::pendulum();
  p.meas_tol = 0.01;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> X(-6, 6), U(-6, 6);
  for (int k = 0; k < 5000; ++k) {
    const Vec x = v2(X(rng), X(rng)), u = u1(U(rng));
    const Vec F = dynamics::eval_dynamics(p, x, u);
    const Vec Fm = dynamics::measure_derivative(p, x, u, rng);
    for (int i = 0; i < 2; ++i) EXPECT_LE(std::abs(Fm[i] - F[i]), p.meas_tol * std::abs(Fm[i]) * (1 + 1e-12) + 1e-15);
  }
}

TEST(Measurement, SeedIsReproducible) {
  auto p = dynamics::pendulum();
  p.meas_tol = 0.01;
  const Vec x = v2(1, 1), u = u1(0.5);
  const Vec a = dynamics::measure_derivative(p, x, u, 42u);
  const Vec b = dynamics::measure_derivative(p, x, u, 42u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, dynamics::measure_derivative(p, x, u, 43u));
}

TEST(Simulate, EquilibriumStaysPut) {
  const auto p = dynamics::pendulum();
  dynamics::StageCost cost{Mat::Identity(2, 2), Vec::Ones(1), 0.1};
  const auto tr = dynamics::simulate(p, zero_input(1), v2(0, 0), 0.01, 1.0, cost);
  ASSERT_EQ(tr.size(), 101u);
  for (const auto& x : tr.states) EXPECT_EQ(x.norm(), 0.0);
  EXPECT_EQ(tr.costs.back(), 0.0);
  EXPECT_FALSE(tr.diverged);
}

TEST(Simulate, Rk4GlobalErrorIsFourthOrder) {
  const auto p = dynamics::pendulum();
  const Vec x0 = v2(0.5, 0.0);
  const double h = 0.02;
  const Vec ref = integrate(p, x0, h / 8, 1.0);
  const double e1 = (integrate(p, x0, h, 1.0) - ref).norm();
  const double e2 = (integrate(p, x0, h / 2, 1.0) - ref).norm();
  const double ratio = e1 / e2;
  EXPECT_GE(ratio, 12.0);
  EXPECT_LE(ratio, 20.0);
}

TEST(Simulate, UprightIsUnstableOpenLoop) {
  const auto p = dynamics::pendulum();
  dynamics::StageCost cost{Mat::Identity(2, 2), Vec::Ones(1), 0.0};
  Box safety = Box::symmetric(Vec::Constant(2, 1.0));
  const auto tr = dynamics::simulate(p, zero_input(1), v2(0.1, 0), 0.005, 5.0, cost, safety);
  ASSERT_GT(tr.size(), 2u);
  EXPECT_GT(tr.states[1][0], 0.1);
  EXPECT_GT(tr.states[10][0], tr.states[1][0]);
  EXPECT_TRUE(tr.diverged);
}

TEST(Simulate, CostIsNonnegativeAndNondecreasing) {
  const auto p = dynamics::pendulum();
  dynamics::StageCost cost{Vec(v2(2, 1)).asDiagonal(), Vec::Ones(1), 0.05};
  auto ctrl = [](const Vec& x) { return u1(-3.0 * x[0] - 0.5 * x[1]); };
  const auto tr = dynamics::simulate(p, ctrl, v2(0.4, -0.3), 0.005, 3.0, cost);
  EXPECT_EQ(tr.costs.front(), 0.0);
  for (std::size_t k = 1; k < tr.costs.size(); ++k) EXPECT_GE(tr.costs[k], tr.costs[k - 1]);
  for (const auto& u : tr.inputs) EXPECT_LE(std::abs(u[0]), 6.0);
}

TEST(Simulate, CsvHeaderListsStatesInputsCost) {
  const auto p = dynamics::pendulum();
  dynamics::StageCost cost{Mat::Identity(2, 2), Vec::Ones(1), 0.0};
  const auto tr = dynamics::simulate(p, zero_input(1), v2(0.01, 0), 0.01, 0.05, cost);
  std::ostringstream os;
  tr.write_csv(os);
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "t,x1,x2,u1,cost");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 7);
  EXPECT_THROW(dynamics::simulate(p, zero_input(1), v2(0, 0), 0.0, 1.0, cost), ConfigError);
  EXPECT_THROW(dynamics::simulate(p, zero_input(1), v2(0, 0), 0.1, 0.01, cost), ConfigError);
}

TEST(FiniteDifference, ExactOnLinearMotion) {
  const Vec v = v2(0.3, -1.7);
  const double h = 0.01;
  EXPECT_EQ(dynamics::finite_diff_derivative(v2(1, 2), v2(1, 2), h).norm(), 0.0);
  EXPECT_LT((dynamics::finite_diff_derivative(v * 0.42, v * (0.42 - h), h) - v).norm(), 1e-12);
  EXPECT_THROW(dynamics::finite_diff_derivative(v, v, 0.0), ConfigError);
}

TEST(FiniteDifference, ErrorIsFirstOrder) {
  const auto p = dynamics::pendulum();
  const Vec x = v2(0.5, 0.3), u = u1(0.2);
  auto err = [&](double h) {
    const Vec next = dynamics::rk4_step(p, x, u, h);
    return (dynamics::finite_diff_derivative(next, x, h) - dynamics::eval_dynamics(p, x, u)).norm();
  };
  const double ratio = err(0.004) / err(0.002);
  EXPECT_NEAR(ratio, 2.0, 0.1);
}

TEST(Lipschitz, DeclaredConstantsHoldOnProbePairs) {
  std::mt19937_64 rng(3);
  for (const std::string name : {"pendulum", "vehicle"}) {
    const auto p = dynamics::preset(name);
    std::uniform_real_distribution<double> U01(0, 1);
    auto draw = [&]() {
      Vec x(p.n);
      for (int i = 0; i < p.n; ++i) x[i] = p.domain.lo[i] + p.domain.width()[i] * U01(rng);
      return x;
    };
    std::normal_distribution<double> N(0, 1);
    for (int k = 0; k < 20000; ++k) {
      const Vec x = draw();
      Vec y = x;
      // Mix far pairs and near pairs (the latter probe local slopes).
      const double scale = k % 2 ? 1e-3 : 1.0;
      for (int i = 0; i < p.n; ++i) y[i] += scale * p.domain.width()[i] * N(rng) * 0.1;
      y = p.domain.clamp(y);
      if ((x - y).norm() == 0) continue;
      const Vec u = p.u_bar * (2 * U01(rng) - 1);
      const Vec w = p.u_bar * (2 * U01(rng) - 1);
      const Vec dx = (dynamics::eval_dynamics(p, x, u) - dynamics::eval_dynamics(p, y, u)).cwiseAbs();
      const Vec du = (dynamics::eval_dynamics(p, x, u) - dynamics::eval_dynamics(p, x, w)).cwiseAbs();
      for (int i = 0; i < p.n; ++i) {
        EXPECT_LE(dx[i], p.lipschitz_x[i] * (x - y).norm() * (1 + 1e-9)) << name << " state component " << i;
        EXPECT_LE(du[i], p.lipschitz_u[i] * (u - w).norm() * (1 + 1e-9) + 1e-12) << name << " input component " << i;
      }
    }
  }
}

TEST(Vehicle, HeadingStaysWrapped) {
  const auto p = dynamics::vehicle();
  Vec x = Vec::Zero(5);
  x[4] = 3.1;
  for (int k = 0; k < 2000; ++k) {
    x = dynamics::rk4_step(p, x, u1(0.4), 0.01);
    ASSERT_GE(x[4], -std::numbers::pi);
    ASSERT_LT(x[4], std::numbers::pi);
  }
  EXPECT_NEAR(dynamics::wrap_angle(3 * std::numbers::pi), -std::numbers::pi, 1e-12);
  EXPECT_THROW(dynamics::preset("cart"), ConfigError);
}
