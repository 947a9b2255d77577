#pragma once

#include <cstdint>
#include <numbers>
#include <ostream>
#include <random>
#include <string>

#include "core.hpp"

namespace pwlc::dynamics {

// Ground-truth plant x' = f(x) + g(x) u. Plants that are not exactly
// control-affine in u (the skidding vehicle) supply `field` instead, which then
// takes precedence over f/g in every evaluation.
struct PlantSpec {
  std::string name;
  int n = 0;
  int m = 0;
  std::function<Vec(const Vec&)> f;
  std::function<Mat(const Vec&)> g;
  std::function<Vec(const Vec&, const Vec&)> field;
  Vec u_bar;
  Vec lipschitz_x;
  Vec lipschitz_u;
  double meas_tol = 0.0;
  Box domain;
  // Optional state normalization applied after each integration step (angle wrapping).
  std::function<void(Vec&)> normalize;

  void validate() const {
    if (n <= 0 || m <= 0) throw ConfigError("plant '" + name + "': dimensions must be positive");
    if (!field && (!f || !g)) throw ConfigError("plant '" + name + "': dynamics not set");
    if (u_bar.size() != m || (u_bar.array() <= 0.0).any())
      throw ConfigError("plant '" + name + "': input bounds must be positive");
    if (lipschitz_x.size() != n || lipschitz_u.size() != n)
      throw ConfigError("plant '" + name + "': Lipschitz constants must have n entries");
    if (!(meas_tol >= 0.0 && meas_tol < 1.0))
      throw ConfigError("plant '" + name + "': measurement tolerance must lie in [0, 1)");
    if (domain.dim() != n) throw ConfigError("plant '" + name + "': domain box has wrong dimension");
  }

  Box input_box() const { return Box(-u_bar, u_bar); }
};

// Evaluation without domain checks; used inside integrator stages.
inline Vec eval_unchecked(const PlantSpec& plant, const Vec& x, const Vec& u) {
  if (plant.field) return plant.field(x, u);
  return plant.f(x) + plant.g(x) * u;
}

inline Vec eval_dynamics(const PlantSpec& plant, const Vec& x, const Vec& u) {
  if (x.size() != plant.n || u.size() != plant.m) throw DomainError("eval_dynamics: dimension mismatch");
  double tol = 1e-9 * std::max(1.0, plant.domain.extent());
  if (!plant.domain.contains(x, tol)) throw DomainError("eval_dynamics: state outside the plant domain");
  for (int j = 0; j < plant.m; ++j)
    if (std::abs(u[j]) > plant.u_bar[j] * (1.0 + 1e-12)) throw DomainError("eval_dynamics: input exceeds bound");
  return eval_unchecked(plant, x, u);
}

// Noisy derivative measurement F~ = F / (1 + delta), delta ~ U[-rho_e, rho_e]
// per component, so |F~ - F| <= rho_e |F~| holds with equality at the extremes.
template <class Rng>
Vec measure_derivative(const PlantSpec& plant, const Vec& x, const Vec& u, Rng& rng) {
  Vec F = eval_dynamics(plant, x, u);
  if (plant.meas_tol == 0.0) return F;
  std::uniform_real_distribution<double> dist(-plant.meas_tol, plant.meas_tol);
  for (int i = 0; i < plant.n; ++i) F[i] /= (1.0 + dist(rng));
  return F;
}

inline Vec measure_derivative(const PlantSpec& plant, const Vec& x, const Vec& u, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return measure_derivative(plant, x, u, rng);
}

inline Vec finite_diff_derivative(const Vec& x_k, const Vec& x_prev, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_derivative: step must be positive");
  return (x_k - x_prev) / h;
}

inline Vec saturate(const Vec& u, const Vec& u_bar) { return u.cwiseMax(-u_bar).cwiseMin(u_bar); }

// Running cost of the discounted quadratic functional.
struct StageCost {
  Mat Q;
  Vec r;  // diagonal of R
  double gamma = 0.0;

  double operator()(const Vec& x, const Vec& u) const {
    return x.dot(Q * x) + u.dot(r.cwiseProduct(u));
  }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> inputs;  // inputs[k] is held on [t_k, t_{k+1}); the last entry is the input at t_N
  std::vector<double> costs;  // accumulated discounted cost up to t_k
  bool diverged = false;

  std::size_t size() const { return times.size(); }

  void write_csv(std::ostream& os) const {
    if (states.empty()) return;
    const auto n = states.front().size();
    const auto m = inputs.front().size();
    os << 't';
    for (Eigen::Index i = 0; i < n; ++i) os << ",x" << i + 1;
    for (Eigen::Index j = 0; j < m; ++j) os << ",u" << j + 1;
    os << ",cost\n";
    os.precision(17);
    for (std::size_t k = 0; k < times.size(); ++k) {
      os << times[k];
      for (Eigen::Index i = 0; i < n; ++i) os << ',' << states[k][i];
      for (Eigen::Index j = 0; j < m; ++j) os << ',' << inputs[k][j];
      os << ',' << costs[k] << '\n';
    }
  }
};

using Controller = std::function<Vec(const Vec&)>;

inline Vec rk4_step(const PlantSpec& plant, const Vec& x, const Vec& u, double h, bool normalize = true) {
  Vec k1 = eval_unchecked(plant, x, u);
  Vec k2 = eval_unchecked(plant, x + 0.5 * h * k1, u);
  Vec k3 = eval_unchecked(plant, x + 0.5 * h * k2, u);
  Vec k4 = eval_unchecked(plant, x + h * k3, u);
  Vec next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (normalize && plant.normalize) plant.normalize(next);
  return next;
}

// Fixed-step RK4 of the closed loop with zero-order-hold, saturated input.
// Leaving `safety` truncates the trajectory and flags it as diverged.
inline Trajectory simulate(const PlantSpec& plant, const Controller& controller, const Vec& x0, double h,
                           double T, const StageCost& cost, const Box& safety) {
  if (!(h > 0.0)) throw ConfigError("simulate: step must be positive");
  if (!(T >= h * (1.0 - 1e-12))) throw ConfigError("simulate: horizon shorter than one step");
  const auto steps = static_cast<long>(std::llround(T / h));
  Trajectory traj;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  Vec x = x0;
  if (!safety.contains(x)) throw DomainError("simulate: initial state outside the safety box");
  double accumulated = 0.0;
  Vec u = saturate(controller(x), plant.u_bar);
  for (long k = 0; k <= steps; ++k) {
    const double t = k * h;
    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.inputs.push_back(u);
    traj.costs.push_back(accumulated);
    if (k == steps) break;
    Vec next = rk4_step(plant, x, u, h);
    if (!next.allFinite() || !safety.contains(next)) {
      traj.diverged = true;
      break;
    }
    const double left = std::exp(-cost.gamma * t) * cost(x, u);
    const double right = std::exp(-cost.gamma * (t + h)) * cost(next, u);
    accumulated += 0.5 * h * (left + right);
    x = std::move(next);
    u = saturate(controller(x), plant.u_bar);
  }
  return traj;
}

inline Trajectory simulate(const PlantSpec& plant, const Controller& controller, const Vec& x0, double h,
                           double T, const StageCost& cost) {
  return simulate(plant, controller, x0, h, T, cost, plant.domain);
}

// ---------------------------------------------------------------------------
// Built-in plants

struct PendulumParams {
  double G = 9.81;
  double L = 0.5;
  double mass = 0.15;
  double b = 0.1;
  double u_bar = 6.0;
  double meas_tol = 1e-3;
  double domain_half = 18.0;
};

inline PlantSpec pendulum(const PendulumParams& p = {}) {
  PlantSpec s;
  s.name = "pendulum";
  s.n = 2;
  s.m = 1;
  const double a = p.G / p.L;
  const double damp = p.b / (p.mass * p.L * p.L);
  const double gain = 1.0 / (p.mass * p.L * p.L);
  s.f = [a, damp](const Vec& x) {
    Vec out(2);
    out << x[1], a * std::sin(x[0]) - damp * x[1];
    return out;
  };
  s.g = [gain](const Vec&) {
    Mat out(2, 1);
    out << 0.0, gain;
    return out;
  };
  s.u_bar = Vec::Constant(1, p.u_bar);
  // |dF2/dx| <= sqrt(a^2 + damp^2) at cos(x1) = +-1; F1 = x2.
  s.lipschitz_x = Vec(2);
  s.lipschitz_x << 1.0, std::hypot(a, damp);
  s.lipschitz_u = Vec(2);
  s.lipschitz_u << 0.0, gain;
  s.meas_tol = p.meas_tol;
  s.domain = Box::symmetric(Vec::Constant(2, p.domain_half));
  return s;
}

// Vehicle constants are not published with the model; these defaults are
// chosen for a mid-size car at low constant speed.
struct VehicleParams {
  double C_af = 5.0e4;
  double C_ar = 5.0e4;
  double L_f = 1.2;
  double L_r = 1.4;
  double I_z = 2500.0;
  double mass = 1500.0;
  double v_x = 5.0;
  double goal_x = 70.0;
  double goal_y = 70.0;
  double u_bar = 0.5;
  double meas_tol = 1e-3;
};

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0) a += two_pi;
  return a - std::numbers::pi;
}

// State (v_y, r, x - goal_x, y - goal_y, theta); input front-wheel angle.
inline PlantSpec vehicle(const VehicleParams& p = {}) {
  PlantSpec s;
  s.name = "vehicle";
  s.n = 5;
  s.m = 1;
  s.field = [p](const Vec& x, const Vec& u) {
    const double vy = x[0], r = x[1], th = x[4], d = u[0];
    const double cf = p.C_af * std::cos(d);
    Vec out(5);
    out[0] = -(cf + p.C_ar) / (p.mass * p.v_x) * vy + (-p.L_f * cf + p.L_r * p.C_ar) / (p.I_z * p.v_x) * r +
             cf / p.mass * d;
    out[1] = ((-p.L_f * cf + p.L_r * p.C_ar) / (p.mass * p.v_x) - p.v_x) * vy -
             (p.L_f * p.L_f * cf + p.L_r * p.L_r * p.C_ar) / (p.I_z * p.v_x) * r + p.L_f * cf / p.I_z * d;
    out[2] = p.v_x * std::cos(th) - vy * std::sin(th);
    out[3] = p.v_x * std::sin(th) + vy * std::cos(th);
    out[4] = r;
    return out;
  };
  s.f = [field = s.field](const Vec& x) { return field(x, Vec::Zero(1)); };
  s.u_bar = Vec::Constant(1, p.u_bar);
  Vec half(5);
  half << 10.0, 5.0, 250.0, 250.0, std::numbers::pi;
  s.domain = Box::symmetric(half);
  s.normalize = [](Vec& x) { x[4] = wrap_angle(x[4]); };
  s.meas_tol = p.meas_tol;
  // Bounds from the Jacobian over the domain box (heuristic for the 5-state plant).
  const double cmax = p.C_af;
  Vec lx(5), lu(5);
  const double a11 = (cmax + p.C_ar) / (p.mass * p.v_x);
  const double a12 = (p.L_f * cmax + p.L_r * p.C_ar) / (p.I_z * p.v_x);
  const double a21 = (p.L_f * cmax + p.L_r * p.C_ar) / (p.mass * p.v_x) + p.v_x;
  const double a22 = (p.L_f * p.L_f * cmax + p.L_r * p.L_r * p.C_ar) / (p.I_z * p.v_x);
  const double vy_max = half[0], r_max = half[1];
  lx << std::hypot(a11, a12), std::hypot(a21, a22), std::hypot(1.0, p.v_x + vy_max), std::hypot(1.0, p.v_x + vy_max),
      1.0;
  const double dmax = p.u_bar;
  lu << p.C_af / p.mass * (1.0 + dmax) + p.C_af / (p.mass * p.v_x) * vy_max + p.L_f * p.C_af / (p.I_z * p.v_x) * r_max,
      p.L_f * p.C_af / p.I_z * (1.0 + dmax) + p.L_f * p.C_af / (p.mass * p.v_x) * vy_max +
          p.L_f * p.L_f * p.C_af / (p.I_z * p.v_x) * r_max,
      0.0, 0.0, 0.0;
  s.lipschitz_x = lx;
  s.lipschitz_u = lu;
  return s;
}

inline PlantSpec preset(const std::string& name) {
  if (name == "pendulum") return pendulum();
  if (name == "vehicle") return vehicle();
  throw ConfigError("unknown plant preset '" + name + "'");
}

}  // namespace pwlc::dynamics
