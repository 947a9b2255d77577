#include <iostream>

#include <CLI11.hpp>

#include "pwlc/pwlc.hpp"

using namespace pwlc;

namespace {

struct Common {
  std::string config_path;
  std::string plant;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool linear_only = false;
  std::string cells;
  std::optional<double> epsilon;
  std::optional<double> gap;
  std::optional<long> node_cap;
  std::optional<long> episodes;
  bool resume = false;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool with_plant) {
  app->add_option("--config", c.config_path, "JSON experiment configuration")->check(CLI::ExistingFile);
  if (with_plant) app->add_option("--plant", c.plant, "preset to start from when no config is given (pendulum, vehicle)");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--out-dir", c.out_dir, "output directory");
  app->add_flag("--linear-only", c.linear_only, "drop the affine offset from the feedback gains");
  app->add_option("--cells", c.cells, "uniform grid, e.g. 16x16");
  app->add_option("--epsilon", c.epsilon, "radius of the excluded box around the origin");
  app->add_option("--gap", c.gap, "absolute optimality gap of the verifier");
  app->add_option("--node-cap", c.node_cap, "branch-and-bound node budget per verification");
  app->add_option("--episodes", c.episodes, "number of learning episodes");
  app->add_flag("--resume", c.resume, "reuse pwa.json (and certificate.json) from the output directory");
  app->add_flag("--quiet", c.quiet, "no progress output");
}

std::vector<int> parse_cells(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, 'x')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("--cells expects counts separated by 'x', e.g. 16x16");
    }
  }
  return out;
}

config::Config make_config(const Common& c, const std::string& fallback_plant) {
  config::Config cfg = c.config_path.empty() ? config::defaults_for(c.plant.empty() ? fallback_plant : c.plant)
                                             : config::load(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out_dir.empty()) cfg.output = c.out_dir;
  if (c.linear_only) cfg.linear_only = true;
  if (!c.cells.empty()) {
    cfg.cells = parse_cells(c.cells);
    cfg.breakpoints.clear();
  }
  if (c.epsilon) cfg.epsilon = *c.epsilon;
  if (c.gap) cfg.gap = *c.gap;
  if (c.node_cap) cfg.node_cap = *c.node_cap;
  if (c.episodes) cfg.training.episodes = *c.episodes;
  cfg.validate();
  return cfg;
}

int report(const harness::PendulumRun& run, const harness::Output& out) {
  const auto summary = harness::summary_json(run);
  out.json_file("summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  if (run.exit_code == 1) std::cerr << "pwlc: " << run.failed_stage << " failed: " << run.error << '\n';
  return run.exit_code;
}

int run_stage(const Common& c, harness::Stage stop) {
  const auto cfg = make_config(c, "pendulum");
  harness::Output out(cfg.output);
  if (cfg.plant == "vehicle") {
    if (stop != harness::Stage::Identify)
      throw UnsupportedError("the vehicle has 5 states; only identification and control learning are supported");
    auto run = harness::run_vehicle(cfg, out, !c.quiet);
    if (run.exit_code) std::cerr << "pwlc: " << run.error << '\n';
    return run.exit_code;
  }
  harness::PipelineOptions po;
  po.stop = stop;
  po.resume = c.resume;
  po.verbose = !c.quiet;
  const auto run = harness::run_pendulum(cfg, out, po);
  const int code = report(run, out);
  // Stages before certification succeed whenever they complete.
  return stop < harness::Stage::Certify && code != 1 ? 0 : code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning, identification and certification of piecewise-affine controllers"};
  app.require_subcommand(1);

  Common common;
  struct StageCmd {
    const char* name;
    const char* help;
    harness::Stage stop;
  };
  const StageCmd stages[] = {
      {"identify", "run learning episodes and write the identified models", harness::Stage::Identify},
      {"bound", "identify, then bound and validate the model mismatch", harness::Stage::Bound},
      {"control", "bound, then extract (and stitch) the piecewise-affine feedback", harness::Stage::Control},
      {"certify", "control, then search for a Lyapunov certificate", harness::Stage::Certify},
      {"roa", "certify, then trace the region of attraction and evaluate trajectories", harness::Stage::Roa}};
  for (const auto& s : stages) {
    auto* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, common, true);
    sub->callback([&common, stop = s.stop]() { throw CLI::RuntimeError(run_stage(common, stop)); });
  }

  std::string which;
  auto* pipeline = app.add_subcommand("pipeline", "full experiment for one plant");
  pipeline->add_option("plant", which, "pendulum or vehicle")->required()->check(CLI::IsMember({"pendulum", "vehicle"}));
  add_common(pipeline, common, false);
  pipeline->callback([&]() {
    auto c = common;
    c.plant = which;
    const auto cfg = make_config(c, which);
    if (cfg.plant != which) throw ConfigError("config plant '" + cfg.plant + "' does not match 'pipeline " + which + "'");
    // The vehicle experiment ends after control learning.
    throw CLI::RuntimeError(run_stage(c, which == "vehicle" ? harness::Stage::Identify : harness::Stage::Roa));
  });

  std::string sim_plant = "pendulum", sim_controller, sim_out = "out/simulate";
  std::vector<double> sim_x0;
  double sim_seconds = 5.0, sim_h = 0.005;
  auto* simulate = app.add_subcommand("simulate", "RK4 simulation of a plant under zero input or a saved controller");
  simulate->add_option("--plant", sim_plant, "pendulum or vehicle")->check(CLI::IsMember({"pendulum", "vehicle"}));
  simulate->add_option("--x0", sim_x0, "initial state")->required();
  simulate->add_option("--seconds", sim_seconds, "horizon");
  simulate->add_option("--step", sim_h, "integration step");
  simulate->add_option("--controller", sim_controller, "pwa.json written by the control stage")->check(CLI::ExistingFile);
  simulate->add_option("--out-dir", sim_out, "output directory");
  simulate->callback([&]() {
    const auto plant = dynamics::preset(sim_plant);
    const Vec x0 = Eigen::Map<const Vec>(sim_x0.data(), static_cast<Eigen::Index>(sim_x0.size()));
    if (x0.size() != plant.n) throw ConfigError("--x0 needs " + std::to_string(plant.n) + " entries");
    dynamics::Controller controller = [m = plant.m](const Vec&) { return Vec::Zero(m); };
    std::optional<harness::PwaCheckpoint> pwa;
    if (!sim_controller.empty()) {
      pwa = harness::pwa_from_json(harness::read_json(sim_controller));
      if (pwa->part.dim() != plant.n) throw ConfigError("controller dimension differs from the plant");
      controller = [&pwa](const Vec& x) { return pwa->gains[partition::locate(pwa->part, x).sigma](x); };
    }
    dynamics::StageCost cost{Mat::Identity(plant.n, plant.n), Vec::Ones(plant.m), 0.0};
    const auto traj = dynamics::simulate(plant, controller, x0, sim_h, sim_seconds, cost);
    harness::Output out(sim_out);
    out.csv("trajectory.csv", [&](std::ostream& os) { traj.write_csv(os); });
    svg::Plot p;
    p.title = plant.name + " trajectory";
    p.xlabel = "t [s]";
    p.ylabel = "state";
    for (int i = 0; i < plant.n; ++i) {
      svg::Series s;
      s.label = "x" + std::to_string(i + 1);
      s.color = harness::palette(i);
      s.x = traj.times;
      for (const auto& x : traj.states) s.y.push_back(x[i]);
      p.series.push_back(std::move(s));
    }
    out.svg_file("trajectory.svg", p);
    std::cout << "steps " << traj.size() << (traj.diverged ? " (left the domain)" : "") << '\n';
  });

  long bench_steps = 20000;
  std::string bench_out = "out/bench";
  auto* bench = app.add_subcommand("bench", "per-step identification and control update times for both plants");
  bench->add_option("--steps", bench_steps, "timed steps per plant")->check(CLI::PositiveNumber);
  bench->add_option("--out-dir", bench_out, "output directory");
  bench->callback([&]() {
    std::vector<harness::BenchResult> results;
    for (const char* name : {"pendulum", "vehicle"}) results.push_back(harness::bench(config::defaults_for(name), bench_steps));
    harness::write_bench(harness::Output(bench_out), results);
    for (const auto& r : results)
      std::cout << r.plant << ": identify p50 " << 1e3 * r.identify.p50 << " ms, control p50 " << 1e3 * r.control.p50
                << " ms\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::RuntimeError& e) {
    return e.get_exit_code();
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "pwlc: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
