#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dynamics.hpp"
#include "identify.hpp"
#include "partition.hpp"

// Experiment configuration. The file is JSON; every object is checked against
// its key list and unknown keys are rejected.
namespace pwlc::config {

using nlohmann::json;

struct PlantOverrides {
  std::optional<Vec> u_bar;
  std::optional<double> meas_tol;
  std::optional<Vec> lipschitz_x;
  std::optional<Vec> lipschitz_u;
};

struct Training {
  long episodes = 1000;
  int steps = 200;  // per episode
  Vec init_half;  // half-widths of the outermost initial-state box
  Vec init_center;
  std::vector<double> init_fractions{1.0};  // nested boxes visited cyclically
  double dither = 1.0;  // exploration weight at episode 0
  double dither_decay = 1.0;  // per-episode factor
  double dither_floor = 1.0;
  std::string derivative = "measured";  // or "finite_difference"
  std::vector<double> report_stages{1.0};  // training fractions with an uncertainty snapshot
};

struct Config {
  std::string plant = "pendulum";
  PlantOverrides overrides;
  std::uint64_t seed = 1;
  double h = 0.005;
  Box roi;
  std::vector<std::vector<double>> breakpoints;  // explicit grid, or
  std::vector<int> cells;  // uniform grid counts
  bool stitch = true;
  double margin_fraction = 0.05;
  Training training;
  Mat Q;
  Vec R;
  double gamma = 0.0;
  double riccati_init = 1e-2;
  double kappa = identify::RlsOptions{}.kappa;
  double forgetting = 1.0;
  std::size_t db_capacity = 200;
  double db_eta = 1.0;
  double rho_e = 1e-3;
  double epsilon = 0.3;
  double gap = 0.0;
  long node_cap = 2000000;
  int max_iterations = 300;
  bool linear_only = false;
  int roa_grid = 401;
  int validate_states = 101;
  int validate_inputs = 11;
  int trajectories = 100;
  double sim_seconds = 10.0;
  std::vector<int> goal_states;  // state indices whose norm is the distance to the goal
  unsigned threads = 1;
  std::string output = "out";
  bool write_samples = false;  // full sample database as CSV (large for fine partitions)

  dynamics::PlantSpec make_plant() const {
    auto p = dynamics::preset(plant);
    if (overrides.u_bar) p.u_bar = *overrides.u_bar;
    if (overrides.meas_tol) p.meas_tol = *overrides.meas_tol;
    if (overrides.lipschitz_x) p.lipschitz_x = *overrides.lipschitz_x;
    if (overrides.lipschitz_u) p.lipschitz_u = *overrides.lipschitz_u;
    p.validate();
    return p;
  }

  partition::Partition make_partition() const {
    if (!breakpoints.empty()) return partition::make_grid_partition(roi, breakpoints);
    return partition::make_grid_partition(roi, cells);
  }

  void validate() const {
    const auto p = make_plant();
    const int n = p.n;
    if (!(h > 0.0)) throw ConfigError("config: h must be positive");
    if (roi.dim() != n) throw ConfigError("config: roi has the wrong dimension");
    if (breakpoints.empty() == cells.empty()) throw ConfigError("config: give exactly one of partition.breakpoints or partition.cells");
    if (!cells.empty() && static_cast<int>(cells.size()) != n) throw ConfigError("config: partition.cells needs one count per state");
    if (!breakpoints.empty() && static_cast<int>(breakpoints.size()) != n)
      throw ConfigError("config: partition.breakpoints needs one list per state");
    if (Q.rows() != n || Q.cols() != n) throw ConfigError("config: cost.Q must be n x n");
    if (R.size() != p.m) throw ConfigError("config: cost.R must have m entries");
    if (training.episodes < 1 || training.steps < 1) throw ConfigError("config: training needs episodes and steps");
    if (training.init_half.size() != n || training.init_center.size() != n)
      throw ConfigError("config: training.init_half and init_center need n entries");
    if (training.init_fractions.empty()) throw ConfigError("config: training.init_fractions is empty");
    for (double f : training.init_fractions)
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("config: init_fractions must lie in (0, 1]");
    if (training.derivative != "measured" && training.derivative != "finite_difference")
      throw ConfigError("config: training.derivative must be 'measured' or 'finite_difference'");
    for (double f : training.report_stages)
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("config: report_stages must lie in (0, 1]");
    if (!(training.dither >= 0.0 && training.dither <= 1.0) || !(training.dither_floor >= 0.0 && training.dither_floor <= 1.0))
      throw ConfigError("config: dither weights must lie in [0, 1]");
    if (!(training.dither_decay > 0.0 && training.dither_decay <= 1.0)) throw ConfigError("config: dither_decay must lie in (0, 1]");
    if (!(rho_e >= 0.0 && rho_e < 1.0)) throw ConfigError("config: rho_e must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("config: epsilon must be positive");
    if (!(gap >= 0.0)) throw ConfigError("config: gap must be non-negative");
    if (!(margin_fraction > 0.0 && margin_fraction <= 0.5)) throw ConfigError("config: margin_fraction must lie in (0, 0.5]");
    if (db_capacity == 0 || !(db_eta > 0.0)) throw ConfigError("config: db capacity and eta must be positive");
    if (!(forgetting > 0.0 && forgetting <= 1.0)) throw ConfigError("config: forgetting must lie in (0, 1]");
    for (int g : goal_states)
      if (g < 0 || g >= n) throw ConfigError("config: goal_states index out of range");
    if (roa_grid < 3 || validate_states < 2 || validate_inputs < 1) throw ConfigError("config: grid sizes too small");
  }
};

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
}

inline Vec vec_of(const json& j, const std::string& what) {
  try {
    return identify::vec_from_json(j);
  } catch (const json::exception&) {
    throw ConfigError("config: '" + what + "' must be a list of numbers");
  }
}

inline Mat mat_of(const json& j, const std::string& what) {
  try {
    return identify::mat_from_json(j);
  } catch (const json::exception&) {
    throw ConfigError("config: '" + what + "' must be a list of rows");
  }
}

inline std::vector<double> axis_points(double half, const std::vector<double>& positive) {
  std::vector<double> out;
  for (auto it = positive.rbegin(); it != positive.rend(); ++it) out.push_back(-*it);
  for (double v : positive) out.push_back(v);
  if (std::abs(out.front() + half) > 1e-12 || std::abs(out.back() - half) > 1e-12)
    throw ConfigError("config: symmetric breakpoints must end at the roi half-width");
  return out;
}

inline Config pendulum_defaults() {
  Config c;
  c.plant = "pendulum";
  c.overrides.meas_tol = 1e-4;
  c.h = 0.005;
  c.roi = Box::symmetric(Vec::Constant(2, 6.0));
  // Fine cells at the origin, 0.5 wide elsewhere.
  const std::vector<double> positive{0.1, 0.3, 0.6, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0};
  c.breakpoints = {axis_points(6.0, positive), axis_points(6.0, positive)};
  c.stitch = true;
  c.training.episodes = 300000;
  c.training.steps = 10;
  c.training.init_half = Vec::Constant(2, 6.0);
  c.training.init_center = Vec::Zero(2);
  c.training.init_fractions = {0.05, 1.0 / 6.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  c.training.report_stages = {0.05, 0.25, 1.0};
  c.Q = Mat(2, 2);
  c.Q << 2.0, 0.0, 0.0, 1.0;
  c.R = Vec::Constant(1, 1.0);
  c.db_capacity = 5000;
  c.db_eta = 0.05;
  c.rho_e = 1e-4;
  c.epsilon = 0.3;
  c.max_iterations = 200;
  c.goal_states = {0, 1};
  c.output = "out/pendulum";
  return c;
}

inline Config vehicle_defaults() {
  Config c;
  c.plant = "vehicle";
  c.h = 0.01;
  const auto plant = dynamics::vehicle();
  c.roi = plant.domain;
  c.cells = {1, 1, 2, 2, 8};
  c.stitch = false;
  c.training.episodes = 60;
  c.training.steps = 3000;
  Vec half(5), center(5);
  // Start near the world origin with a random heading; the goal sits at (70, 70).
  half << 0.0, 0.0, 10.0, 10.0, std::numbers::pi;
  center << 0.0, 0.0, -70.0, -70.0, 0.0;
  c.training.init_half = half;
  c.training.init_center = center;
  c.training.init_fractions = {1.0};
  c.training.dither = 1.0;
  c.training.dither_decay = 0.8;
  c.training.dither_floor = 0.02;
  c.training.report_stages = {1.0};
  c.Q = Mat::Zero(5, 5);
  c.Q(2, 2) = 1.0;
  c.Q(3, 3) = 1.0;
  c.R = Vec::Constant(1, 100.0);
  c.gamma = 0.1;
  c.db_capacity = 200;
  c.db_eta = 1.0;
  c.rho_e = 1e-3;
  c.goal_states = {2, 3};
  c.output = "out/vehicle";
  return c;
}

inline Config defaults_for(const std::string& plant) {
  if (plant == "pendulum") return pendulum_defaults();
  if (plant == "vehicle") return vehicle_defaults();
  throw ConfigError("unknown plant preset '" + plant + "'");
}

// Applies a JSON document on top of the preset named by its "plant" key.
inline Config from_json(const json& j) {
  check_keys(j, {"plant", "seed", "h", "roi", "partition", "stitch", "training", "cost", "identify", "uncertainty",
                 "verify", "evaluation", "goal_states", "threads", "output", "write_samples"},
             "top level");
  Config c;
  try {
    std::string preset = "pendulum";
    if (j.contains("plant")) {
      const auto& pj = j.at("plant");
      preset = pj.is_string() ? pj.get<std::string>() : pj.at("name").get<std::string>();
    }
    c = defaults_for(preset);
    if (j.contains("plant")) {
      const auto& pj = j.at("plant");
      if (!pj.is_string()) {
        check_keys(pj, {"name", "u_bar", "meas_tol", "lipschitz_x", "lipschitz_u"}, "plant");
        if (pj.contains("u_bar")) c.overrides.u_bar = vec_of(pj.at("u_bar"), "plant.u_bar");
        if (pj.contains("meas_tol")) c.overrides.meas_tol = pj.at("meas_tol").get<double>();
        if (pj.contains("lipschitz_x")) c.overrides.lipschitz_x = vec_of(pj.at("lipschitz_x"), "plant.lipschitz_x");
        if (pj.contains("lipschitz_u")) c.overrides.lipschitz_u = vec_of(pj.at("lipschitz_u"), "plant.lipschitz_u");
      }
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("h")) c.h = j.at("h").get<double>();
    if (j.contains("roi")) {
      check_keys(j.at("roi"), {"lo", "hi"}, "roi");
      c.roi = Box(vec_of(j.at("roi").at("lo"), "roi.lo"), vec_of(j.at("roi").at("hi"), "roi.hi"));
    }
    if (j.contains("partition")) {
      const auto& pj = j.at("partition");
      check_keys(pj, {"breakpoints", "cells"}, "partition");
      c.breakpoints.clear();
      c.cells.clear();
      if (pj.contains("breakpoints")) c.breakpoints = pj.at("breakpoints").get<std::vector<std::vector<double>>>();
      if (pj.contains("cells")) c.cells = pj.at("cells").get<std::vector<int>>();
    }
    if (j.contains("stitch")) {
      const auto& sj = j.at("stitch");
      check_keys(sj, {"enabled", "margin_fraction"}, "stitch");
      c.stitch = sj.value("enabled", c.stitch);
      c.margin_fraction = sj.value("margin_fraction", c.margin_fraction);
    }
    if (j.contains("training")) {
      const auto& tj = j.at("training");
      check_keys(tj, {"episodes", "steps", "init_half", "init_center", "init_fractions", "dither", "dither_decay",
                      "dither_floor", "derivative", "report_stages"},
                 "training");
      auto& t = c.training;
      t.episodes = tj.value("episodes", t.episodes);
      t.steps = tj.value("steps", t.steps);
      if (tj.contains("init_half")) t.init_half = vec_of(tj.at("init_half"), "training.init_half");
      if (tj.contains("init_center")) t.init_center = vec_of(tj.at("init_center"), "training.init_center");
      if (tj.contains("init_fractions")) t.init_fractions = tj.at("init_fractions").get<std::vector<double>>();
      t.dither = tj.value("dither", t.dither);
      t.dither_decay = tj.value("dither_decay", t.dither_decay);
      t.dither_floor = tj.value("dither_floor", t.dither_floor);
      t.derivative = tj.value("derivative", t.derivative);
      if (tj.contains("report_stages")) t.report_stages = tj.at("report_stages").get<std::vector<double>>();
    }
    if (j.contains("cost")) {
      const auto& cj = j.at("cost");
      check_keys(cj, {"Q", "R", "gamma", "riccati_init"}, "cost");
      if (cj.contains("Q")) c.Q = mat_of(cj.at("Q"), "cost.Q");
      if (cj.contains("R")) c.R = vec_of(cj.at("R"), "cost.R");
      c.gamma = cj.value("gamma", c.gamma);
      c.riccati_init = cj.value("riccati_init", c.riccati_init);
    }
    if (j.contains("identify")) {
      const auto& ij = j.at("identify");
      check_keys(ij, {"kappa", "forgetting", "db_capacity", "db_eta"}, "identify");
      c.kappa = ij.value("kappa", c.kappa);
      c.forgetting = ij.value("forgetting", c.forgetting);
      c.db_capacity = ij.value("db_capacity", c.db_capacity);
      c.db_eta = ij.value("db_eta", c.db_eta);
    }
    if (j.contains("uncertainty")) {
      const auto& uj = j.at("uncertainty");
      check_keys(uj, {"rho_e", "validate_states", "validate_inputs"}, "uncertainty");
      c.rho_e = uj.value("rho_e", c.rho_e);
      c.validate_states = uj.value("validate_states", c.validate_states);
      c.validate_inputs = uj.value("validate_inputs", c.validate_inputs);
    }
    if (j.contains("verify")) {
      const auto& vj = j.at("verify");
      check_keys(vj, {"epsilon", "gap", "node_cap", "max_iterations", "linear_only", "roa_grid"}, "verify");
      c.epsilon = vj.value("epsilon", c.epsilon);
      c.gap = vj.value("gap", c.gap);
      c.node_cap = vj.value("node_cap", c.node_cap);
      c.max_iterations = vj.value("max_iterations", c.max_iterations);
      c.linear_only = vj.value("linear_only", c.linear_only);
      c.roa_grid = vj.value("roa_grid", c.roa_grid);
    }
    if (j.contains("evaluation")) {
      const auto& ej = j.at("evaluation");
      check_keys(ej, {"trajectories", "seconds"}, "evaluation");
      c.trajectories = ej.value("trajectories", c.trajectories);
      c.sim_seconds = ej.value("seconds", c.sim_seconds);
    }
    if (j.contains("goal_states")) c.goal_states = j.at("goal_states").get<std::vector<int>>();
    if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    if (j.contains("write_samples")) c.write_samples = j.at("write_samples").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json to_json(const Config& c) {
  using identify::mat_to_json;
  using identify::vec_to_json;
  json plant{{"name", c.plant}};
  if (c.overrides.u_bar) plant["u_bar"] = vec_to_json(*c.overrides.u_bar);
  if (c.overrides.meas_tol) plant["meas_tol"] = *c.overrides.meas_tol;
  if (c.overrides.lipschitz_x) plant["lipschitz_x"] = vec_to_json(*c.overrides.lipschitz_x);
  if (c.overrides.lipschitz_u) plant["lipschitz_u"] = vec_to_json(*c.overrides.lipschitz_u);
  json part = json::object();
  if (!c.breakpoints.empty()) part["breakpoints"] = c.breakpoints;
  if (!c.cells.empty()) part["cells"] = c.cells;
  const auto& t = c.training;
  return {{"plant", plant},
          {"seed", c.seed},
          {"h", c.h},
          {"roi", {{"lo", vec_to_json(c.roi.lo)}, {"hi", vec_to_json(c.roi.hi)}}},
          {"partition", part},
          {"stitch", {{"enabled", c.stitch}, {"margin_fraction", c.margin_fraction}}},
          {"training",
           {{"episodes", t.episodes},
            {"steps", t.steps},
            {"init_half", vec_to_json(t.init_half)},
            {"init_center", vec_to_json(t.init_center)},
            {"init_fractions", t.init_fractions},
            {"dither", t.dither},
            {"dither_decay", t.dither_decay},
            {"dither_floor", t.dither_floor},
            {"derivative", t.derivative},
            {"report_stages", t.report_stages}}},
          {"cost", {{"Q", mat_to_json(c.Q)}, {"R", vec_to_json(c.R)}, {"gamma", c.gamma}, {"riccati_init", c.riccati_init}}},
          {"identify", {{"kappa", c.kappa}, {"forgetting", c.forgetting}, {"db_capacity", c.db_capacity}, {"db_eta", c.db_eta}}},
          {"uncertainty", {{"rho_e", c.rho_e}, {"validate_states", c.validate_states}, {"validate_inputs", c.validate_inputs}}},
          {"verify",
           {{"epsilon", c.epsilon},
            {"gap", c.gap},
            {"node_cap", c.node_cap},
            {"max_iterations", c.max_iterations},
            {"linear_only", c.linear_only},
            {"roa_grid", c.roa_grid}}},
          {"evaluation", {{"trajectories", c.trajectories}, {"seconds", c.sim_seconds}}},
          {"goal_states", c.goal_states},
          {"threads", c.threads},
          {"output", c.output},
          {"write_samples", c.write_samples}};
}

inline Config load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

}  // namespace pwlc::config
