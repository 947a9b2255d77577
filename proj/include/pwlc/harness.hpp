#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "config.hpp"
#include "control.hpp"
#include "svg.hpp"
#include "uncertainty.hpp"
#include "verify.hpp"

// End-to-end experiments: learning episodes, the pendulum certification
// pipeline, the vehicle learning run, and step-time benchmarks. Every file is
// written through a temporary and renamed into place.
namespace pwlc::harness {

namespace fs = std::filesystem;
using config::Config;
using identify::BasisSet;
using identify::PieceModel;
using nlohmann::json;
using partition::Partition;

inline void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Artifact sink; an empty directory disables writing.
class Output {
 public:
  Output() = default;
  explicit Output(fs::path dir) : dir_(std::move(dir)) {}

  bool enabled() const { return !dir_.empty(); }
  const fs::path& dir() const { return dir_; }

  void text(const std::string& name, const std::string& content) const {
    if (enabled()) atomic_write(dir_ / name, content);
  }
  void json_file(const std::string& name, const json& j) const { text(name, j.dump(2) + "\n"); }
  void svg_file(const std::string& name, const svg::Plot& plot) const { text(name, svg::render(plot)); }
  template <class Fn>
  void csv(const std::string& name, Fn&& fill) const {
    if (!enabled()) return;
    std::ostringstream os;
    os.precision(12);
    fill(os);
    text(name, os.str());
  }

 private:
  fs::path dir_;
};

// ---------------------------------------------------------------------------
// Exploration input

// Per-piece additive recurrence in the input box: the golden-ratio sequence
// for m = 1 and the R_m sequence (powers of the inverse of the root of
// x^(m+1) = x + 1) otherwise. Each piece sees an evenly spread input set no
// matter how its visits interleave with other pieces.
class Exploration {
 public:
  Exploration(std::size_t pieces, int m) : alpha_(m), visits_(pieces, 0) {
    double g = 2.0;
    for (int it = 0; it < 64; ++it) g = std::pow(1.0 + g, 1.0 / (m + 1));
    for (int j = 0; j < m; ++j) alpha_[j] = std::pow(1.0 / g, j + 1);
  }

  Vec next(std::size_t sigma, const Vec& u_bar) {
    const long k = visits_.at(sigma)++;
    Vec w(alpha_.size());
    for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = u_bar[j] * (2.0 * std::fmod(0.5 + alpha_[j] * k, 1.0) - 1.0);
    return w;
  }

 private:
  Vec alpha_;
  std::vector<long> visits_;
};

// ---------------------------------------------------------------------------
// Learning episodes

struct EpisodeLog {
  long episode = 0;
  int steps = 0;
  double dither = 0.0;
  double mean_distance = 0.0;
  double final_distance = 0.0;
  double mean_value = 0.0;  // value function current at each step
  double mean_final_value = 0.0;  // value function at the end of training
  double mean_prediction_error = 0.0;
  int modes = 0;
};

struct StepTrace {
  double t = 0.0;
  Vec x;
  Vec u;
  int sigma = 0;
  Vec truth;  // noiseless field
  Vec predicted;  // piece model before the update
  double value = 0.0;
};

struct StageReport {
  double fraction = 0.0;
  long samples = 0;
  uncertainty::Report report;
};

struct Learned {
  dynamics::PlantSpec plant;
  Partition part;
  BasisSet basis;
  control::CostSpec cost;
  std::vector<PieceModel> models;
  identify::SampleDB db;
  control::ValueMatrix vm;
  long samples = 0;
  std::vector<EpisodeLog> episodes;
  std::vector<StageReport> stages;
  std::vector<StepTrace> first_episode;
  std::vector<StepTrace> last_episode;
  std::vector<std::vector<std::pair<int, Vec>>> visited;  // per episode (mode, state), when kept
  std::vector<double> identify_seconds;  // per step, when timing is on
  std::vector<double> control_seconds;
};

struct TrainOptions {
  bool time_steps = false;
  bool stage_reports = true;
  bool keep_states = false;  // needed for mean_final_value
  std::function<void(const EpisodeLog&)> on_episode;
  std::function<void(const StageReport&)> on_stage;
};

inline double goal_distance(const Config& cfg, const Vec& x) {
  double s = 0.0;
  for (int i : cfg.goal_states) s += x[i] * x[i];
  return std::sqrt(s);
}

inline uncertainty::Options report_options(const Config& cfg) {
  uncertainty::Options o;
  o.rho_e = cfg.rho_e;
  o.threads = cfg.threads;
  return o;
}

inline Learned train(const Config& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  Learned L;
  L.plant = cfg.make_plant();
  L.part = cfg.make_partition();
  L.basis = BasisSet::affine(L.plant.n);
  L.cost = control::CostSpec::affine(cfg.Q, cfg.R, cfg.gamma);
  const int n = L.plant.n, m = L.plant.m;
  const auto q = static_cast<std::size_t>(identify::regressor_size(L.basis, m));
  L.models.assign(L.part.size(), PieceModel::zero(n, L.basis.p, m, cfg.kappa));
  L.db = identify::SampleDB(L.part.size(), cfg.db_capacity, cfg.db_eta);
  L.vm = control::ValueMatrix::init(L.part.size(), L.basis.p, cfg.h, cfg.riccati_init);
  identify::RlsOptions rls;
  rls.kappa = cfg.kappa;
  rls.forgetting = cfg.forgetting;

  const auto& tr = cfg.training;
  std::vector<long> stage_after;
  for (double f : tr.report_stages) stage_after.push_back(std::max(1L, std::lround(f * tr.episodes)));
  std::sort(stage_after.begin(), stage_after.end());
  stage_after.erase(std::unique(stage_after.begin(), stage_after.end()), stage_after.end());

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Exploration explore(L.part.size(), m);
  const bool measured = tr.derivative == "measured";
  std::size_t next_stage = 0;

  for (long e = 0; e < tr.episodes; ++e) {
    const double frac = tr.init_fractions[e % tr.init_fractions.size()];
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = tr.init_center[i] + frac * tr.init_half[i] * unit(rng);
    const double a = std::max(tr.dither_floor, tr.dither * std::pow(tr.dither_decay, static_cast<double>(e)));
    const bool keep = e == 0 || e == tr.episodes - 1;
    std::vector<StepTrace> trace;
    std::vector<std::pair<int, Vec>> states;
    std::vector<char> seen(L.part.size(), 0);
    EpisodeLog log;
    log.episode = e;
    log.dither = a;
    double sum_dist = 0.0, sum_value = 0.0, sum_err = 0.0;
    for (int k = 0; k < tr.steps; ++k) {
      if (!cfg.roi.contains(x)) break;
      const int s = partition::locate(L.part, x).sigma;
      auto& piece = L.models[s];
      const auto t0 = Clock::now();
      const Vec fb = control::feedback(L.vm.P[s], piece, L.basis, L.cost, x, L.plant.u_bar);
      const auto t1 = Clock::now();
      const Vec w = explore.next(s, L.plant.u_bar);
      const Vec u = (1.0 - a) * fb + a * w;
      Vec F, next;
      if (measured) {
        F = dynamics::measure_derivative(L.plant, x, u, rng);
        next = dynamics::rk4_step(L.plant, x, u, cfg.h);
      } else {
        next = dynamics::rk4_step(L.plant, x, u, cfg.h, false);
        F = dynamics::finite_diff_derivative(next, x, cfg.h);
        if (L.plant.normalize) L.plant.normalize(next);
      }
      const Vec theta = identify::regressor(L.basis, x, u);
      const Vec predicted = piece.weights * theta;
      const double avg = piece.avg_error;
      const double err = identify::observe_error(piece, theta, F);
      L.db.insert(s, {x, u, theta, F, err, 0}, avg, q);
      const auto t2 = Clock::now();
      identify::rls_update(piece, theta, F, rls);
      const auto t3 = Clock::now();
      auto st = control::riccati_step(L.vm.P[s], piece, L.basis, L.cost, x, L.vm.h_P);
      if (st.diverged) {
        L.vm.diverged[s] = 1;
      } else {
        L.vm.P[s] = std::move(st.P);
        L.vm.updated_at[s] = static_cast<double>(L.samples);
      }
      const auto t4 = Clock::now();
      if (opt.time_steps) {
        L.identify_seconds.push_back(std::chrono::duration<double>(t3 - t2).count());
        L.control_seconds.push_back(std::chrono::duration<double>((t1 - t0) + (t4 - t3)).count());
      }
      const double V = control::value(L.vm.P[s], L.basis, x);
      const double dist = goal_distance(cfg, x);
      if (keep) trace.push_back({k * cfg.h, x, u, s, dynamics::eval_unchecked(L.plant, x, u), predicted, V});
      sum_dist += dist;
      sum_value += V;
      sum_err += (predicted - F).norm();
      seen[s] = 1;
      if (opt.keep_states) states.emplace_back(s, x);
      ++log.steps;
      ++L.samples;
      x = std::move(next);
    }
    if (log.steps > 0) {
      log.mean_distance = sum_dist / log.steps;
      log.mean_value = sum_value / log.steps;
      log.mean_prediction_error = sum_err / log.steps;
    }
    log.final_distance = goal_distance(cfg, x);
    log.modes = static_cast<int>(std::count(seen.begin(), seen.end(), 1));
    L.episodes.push_back(log);
    if (opt.keep_states) L.visited.push_back(std::move(states));
    if (opt.on_episode) opt.on_episode(log);
    if (e == 0) L.first_episode = trace;
    if (e == tr.episodes - 1) L.last_episode = std::move(trace);
    while (next_stage < stage_after.size() && e + 1 == stage_after[next_stage]) {
      if (opt.stage_reports) {
        StageReport sr;
        sr.fraction = static_cast<double>(e + 1) / tr.episodes;
        sr.samples = L.samples;
        sr.report = uncertainty::compute_report(L.plant, L.part, L.models, L.basis, L.db, report_options(cfg));
        if (opt.on_stage) opt.on_stage(sr);
        L.stages.push_back(std::move(sr));
      }
      ++next_stage;
    }
  }
  for (std::size_t e = 0; e < L.visited.size(); ++e) {
    double sum = 0.0;
    for (const auto& [s, x] : L.visited[e]) sum += control::value(L.vm.P[s], L.basis, x);
    if (!L.visited[e].empty()) L.episodes[e].mean_final_value = sum / static_cast<double>(L.visited[e].size());
  }
  return L;
}

// ---------------------------------------------------------------------------
// Checkpoints

// The verification input: partition, continuous piece models, continuous
// disturbance bounds and the deployed affine feedback.
struct PwaCheckpoint {
  Partition part;
  std::vector<AffineModel> models;
  std::vector<Vec> dbar;
  std::vector<control::AffineGains> gains;
  double h = 0.0;
  Box roi;
  Vec u_bar;
};

inline json to_json(const PwaCheckpoint& c) {
  using identify::mat_to_json;
  using identify::vec_to_json;
  json pieces = json::array();
  for (std::size_t s = 0; s < c.models.size(); ++s)
    pieces.push_back({{"A", mat_to_json(c.models[s].A)},
                      {"B", mat_to_json(c.models[s].B)},
                      {"C", vec_to_json(c.models[s].C)},
                      {"dbar", vec_to_json(c.dbar[s])},
                      {"K", mat_to_json(c.gains[s].K)},
                      {"k", vec_to_json(c.gains[s].k)}});
  return {{"partition", partition::to_json(c.part)},
          {"h", c.h},
          {"roi", {{"lo", vec_to_json(c.roi.lo)}, {"hi", vec_to_json(c.roi.hi)}}},
          {"u_bar", vec_to_json(c.u_bar)},
          {"pieces", pieces}};
}

inline PwaCheckpoint pwa_from_json(const json& j) {
  using identify::mat_from_json;
  using identify::vec_from_json;
  PwaCheckpoint c;
  try {
    c.part = partition::partition_from_json(j.at("partition"));
    c.h = j.at("h").get<double>();
    c.roi = Box(vec_from_json(j.at("roi").at("lo")), vec_from_json(j.at("roi").at("hi")));
    c.u_bar = vec_from_json(j.at("u_bar"));
    for (const auto& pj : j.at("pieces")) {
      c.models.push_back({mat_from_json(pj.at("A")), mat_from_json(pj.at("B")), vec_from_json(pj.at("C"))});
      c.dbar.push_back(vec_from_json(pj.at("dbar")));
      c.gains.push_back({mat_from_json(pj.at("K")), vec_from_json(pj.at("k"))});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("pwa checkpoint: ") + e.what());
  }
  if (c.models.size() != c.part.size()) throw ValidationError("pwa checkpoint: one piece per cell required");
  return c;
}

struct Certificate {
  verify::CegStatus status = verify::CegStatus::IterationCap;
  Mat P;
  double upper = 0.0;
  double lower = 0.0;
  int iterations = 0;
  double epsilon = 0.0;
};

inline verify::CegStatus ceg_status_from_string(const std::string& s) {
  for (auto st : {verify::CegStatus::Certified, verify::CegStatus::NoCertificate, verify::CegStatus::GapLimit,
                  verify::CegStatus::IterationCap})
    if (s == verify::to_string(st)) return st;
  throw ValidationError("certificate: unknown status '" + s + "'");
}

inline json to_json(const Certificate& c) {
  json j{{"status", verify::to_string(c.status)}, {"upper_bound", c.upper}, {"best_value", c.lower},
         {"iterations", c.iterations}, {"epsilon", c.epsilon}};
  if (c.P.size()) j["P"] = identify::mat_to_json(c.P);
  return j;
}

inline Certificate certificate_from_json(const json& j) {
  Certificate c;
  try {
    c.status = ceg_status_from_string(j.at("status").get<std::string>());
    c.upper = j.at("upper_bound").get<double>();
    c.lower = j.at("best_value").get<double>();
    c.iterations = j.at("iterations").get<int>();
    c.epsilon = j.at("epsilon").get<double>();
    if (j.contains("P")) c.P = identify::mat_from_json(j.at("P"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("certificate: ") + e.what());
  }
  return c;
}

inline int exit_code(verify::CegStatus s) {
  switch (s) {
    case verify::CegStatus::Certified: return 0;
    case verify::CegStatus::NoCertificate:
    case verify::CegStatus::IterationCap: return 2;
    case verify::CegStatus::GapLimit: return 3;
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Figures

inline const char* palette(std::size_t k) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  return colors[k % 7];
}

inline svg::Plot heatmap_plot(const std::string& title, const Partition& part, const std::vector<double>& values) {
  svg::Plot p;
  p.title = title;
  p.xlabel = "x1";
  p.ylabel = "x2";
  p.xmin = part.domain.lo[0];
  p.xmax = part.domain.hi[0];
  p.ymin = part.domain.lo[1];
  p.ymax = part.domain.hi[1];
  for (std::size_t s = 0; s < part.size(); ++s) {
    const Box b = part.cells[s].bounding_box();
    p.cells.push_back({b.lo[0], b.lo[1], b.hi[0], b.hi[1], values[s]});
  }
  return p;
}

inline svg::Series closed_contour(const std::vector<Eigen::Vector2d>& c, const std::string& label, const std::string& color) {
  svg::Series s;
  s.label = label;
  s.color = color;
  s.width = 1.8;
  for (const auto& v : c) {
    s.x.push_back(v[0]);
    s.y.push_back(v[1]);
  }
  if (!c.empty() && (c.front() - c.back()).norm() > 0.0) {
    s.x.push_back(c.front()[0]);
    s.y.push_back(c.front()[1]);
  }
  return s;
}

inline svg::Series ellipse(const Mat& P, double level, const std::string& label, const std::string& color, int points = 240) {
  Eigen::SelfAdjointEigenSolver<Mat> es(P);
  const Mat T = es.eigenvectors() * es.eigenvalues().cwiseMax(1e-300).cwiseInverse().cwiseSqrt().asDiagonal();
  svg::Series s;
  s.label = label;
  s.color = color;
  s.width = 1.5;
  for (int k = 0; k <= points; ++k) {
    const double t = 2.0 * std::numbers::pi * (k % points) / points;
    const Vec x = std::sqrt(level) * T * Eigen::Vector2d(std::cos(t), std::sin(t));
    s.x.push_back(x[0]);
    s.y.push_back(x[1]);
  }
  return s;
}

inline void write_stage_reports(const Output& out, const Learned& L) {
  out.csv("sample_gaps.csv", [&](std::ostream& os) {
    os << "stage,fraction,samples,piece,state_gap,control_gap,records,dbar_norm\n";
    for (std::size_t k = 0; k < L.stages.size(); ++k) {
      const auto& st = L.stages[k];
      for (std::size_t s = 0; s < st.report.pieces.size(); ++s) {
        const auto& p = st.report.pieces[s];
        os << k << ',' << st.fraction << ',' << st.samples << ',' << s << ',' << p.state_gap.radius << ','
           << p.control_gap.radius << ',' << p.samples << ','
           << (p.bounded ? p.d_bar.norm() : std::numeric_limits<double>::infinity()) << '\n';
      }
    }
  });
  svg::Plot gaps;
  gaps.title = "Largest empty balls per piece";
  gaps.xlabel = "samples";
  gaps.ylabel = "radius";
  svg::Series sx{"state gap (max)"}, sxm{"state gap (mean)"}, su{"control gap (max)"}, sum{"control gap (mean)"};
  sx.color = palette(0);
  sxm.color = palette(2);
  su.color = palette(1);
  sum.color = palette(3);
  for (std::size_t k = 0; k < L.stages.size(); ++k) {
    const auto& st = L.stages[k];
    double mx = 0, ax = 0, mu = 0, au = 0;
    for (const auto& p : st.report.pieces) {
      mx = std::max(mx, p.state_gap.radius);
      mu = std::max(mu, p.control_gap.radius);
      ax += p.state_gap.radius;
      au += p.control_gap.radius;
    }
    const double np = static_cast<double>(std::max<std::size_t>(1, st.report.pieces.size()));
    for (auto* s : {&sx, &sxm, &su, &sum}) s->x.push_back(static_cast<double>(st.samples));
    sx.y.push_back(mx);
    sxm.y.push_back(ax / np);
    su.y.push_back(mu);
    sum.y.push_back(au / np);
  }
  for (auto* s : {&sx, &sxm, &su, &sum}) s->points = s->x.size() == 1;
  gaps.series = {sx, sxm, su, sum};
  out.svg_file("sample_gaps.svg", gaps);
  if (L.part.dim() != 2) return;
  for (std::size_t k = 0; k < L.stages.size(); ++k) {
    const auto& st = L.stages[k];
    std::vector<double> vals;
    for (const auto& p : st.report.pieces) vals.push_back(p.bounded ? p.d_bar.norm() : std::numeric_limits<double>::quiet_NaN());
    const auto tag = std::to_string(k);
    out.svg_file("uncertainty_stage" + tag + ".svg",
                 heatmap_plot("|dbar| after " + std::to_string(st.samples) + " samples", L.part, vals));
    out.csv("uncertainty_stage" + tag + ".csv", [&](std::ostream& os) { uncertainty::write_heatmap_csv(os, st.report, L.part); });
  }
}

// Long runs are written as block means so the log stays small.
inline void write_episodes(const Output& out, const std::vector<EpisodeLog>& eps, std::size_t max_rows = 2000) {
  out.csv("episodes.csv", [&](std::ostream& os) {
    os << "episode,steps,dither,mean_distance,final_distance,mean_value,mean_final_value,mean_prediction_error,modes\n";
    const std::size_t block = eps.size() <= max_rows ? 1 : (eps.size() + max_rows - 1) / max_rows;
    for (std::size_t b = 0; b < eps.size(); b += block) {
      const std::size_t end = std::min(eps.size(), b + block);
      const double w = 1.0 / static_cast<double>(end - b);
      double steps = 0, dither = 0, dist = 0, fin = 0, val = 0, fval = 0, err = 0, modes = 0;
      for (std::size_t k = b; k < end; ++k) {
        const auto& e = eps[k];
        steps += w * e.steps;
        dither += w * e.dither;
        dist += w * e.mean_distance;
        fin += w * e.final_distance;
        val += w * e.mean_value;
        fval += w * e.mean_final_value;
        err += w * e.mean_prediction_error;
        modes += w * e.modes;
      }
      os << eps[b].episode << ',' << steps << ',' << dither << ',' << dist << ',' << fin << ',' << val << ',' << fval << ','
         << err << ',' << modes << '\n';
    }
  });
}

inline void write_trace_csv(const Output& out, const std::string& name, const std::vector<StepTrace>& trace) {
  out.csv(name, [&](std::ostream& os) {
    if (trace.empty()) return;
    const auto n = trace.front().x.size(), m = trace.front().u.size();
    os << 't';
    for (Eigen::Index i = 0; i < n; ++i) os << ",x" << i + 1;
    for (Eigen::Index j = 0; j < m; ++j) os << ",u" << j + 1;
    os << ",mode,value";
    for (Eigen::Index i = 0; i < n; ++i) os << ",f" << i + 1 << ",fhat" << i + 1;
    os << '\n';
    for (const auto& s : trace) {
      os << s.t;
      for (Eigen::Index i = 0; i < n; ++i) os << ',' << s.x[i];
      for (Eigen::Index j = 0; j < m; ++j) os << ',' << s.u[j];
      os << ',' << s.sigma << ',' << s.value;
      for (Eigen::Index i = 0; i < n; ++i) os << ',' << s.truth[i] << ',' << s.predicted[i];
      os << '\n';
    }
  });
}

inline void write_learning(const Output& out, const Learned& L) {
  identify::ModelSet ms{identify::BasisKind::Affine, L.plant.n, L.plant.m, L.models};
  out.json_file("models.json", identify::to_json(ms));
  out.json_file("value.json", control::to_json(L.vm));
  write_episodes(out, L.episodes);
  write_stage_reports(out, L);
}

// ---------------------------------------------------------------------------
// Pendulum pipeline

enum class Stage { Identify, Bound, Control, Certify, Roa };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::Identify: return "identify";
    case Stage::Bound: return "bound";
    case Stage::Control: return "control";
    case Stage::Certify: return "certify";
    case Stage::Roa: return "roa";
  }
  return "?";
}

struct Evaluation {
  int euler_runs = 0;
  int euler_left = 0;
  int euler_reached = 0;
  double euler_worst_reach_seconds = 0.0;
  int rk4_runs = 0;
  int rk4_converged = 0;
  double rk4_worst_final = 0.0;  // max |x(T)|_inf
};

struct PendulumRun {
  Stage reached = Stage::Identify;
  std::optional<Learned> learned;
  uncertainty::Report report;
  uncertainty::Violations validation;
  uncertainty::Violations negative_control;
  std::vector<AffineModel> cell_models;
  std::vector<control::AffineGains> cell_gains;
  PwaCheckpoint pwa;
  bool stitched = false;
  verify::DiscretePWA sys;
  verify::CegResult ceg;
  Certificate certificate;
  std::optional<verify::Roa> roa;
  std::optional<verify::LqrBaseline> lqr;
  Evaluation evaluation;
  std::vector<std::pair<std::string, double>> seconds;
  int exit_code = 0;
  std::string failed_stage;
  std::string error;
};

struct PipelineOptions {
  Stage stop = Stage::Roa;
  bool resume = false;  // load pwa.json (and certificate.json for roa) from the output directory
  bool verbose = false;
};

inline PwaCheckpoint deployable(const Config& cfg, const Learned& L, const std::vector<AffineModel>& models,
                                const std::vector<Vec>& dbar, const std::vector<control::AffineGains>& gains,
                                bool& stitched) {
  PwaCheckpoint c;
  c.h = cfg.h;
  c.roi = cfg.roi;
  c.u_bar = L.plant.u_bar;
  stitched = cfg.stitch && L.part.dim() == 2 && L.part.is_grid();
  if (!stitched) {
    c.part = L.part;
    c.models = models;
    c.dbar = dbar;
    c.gains = gains;
    return c;
  }
  const auto st = partition::stitch_margins_2d(L.part, models, partition::default_margin(L.part, cfg.margin_fraction));
  c.part = st.partition;
  c.models = st.models;
  c.dbar = uncertainty::transfer_bounds(st, models, dbar, L.plant.u_bar);
  c.gains = verify::stitch_gains(st, L.part, gains);
  return c;
}

inline verify::DiscretePWA discretize(const PwaCheckpoint& c, double epsilon) {
  return verify::discretize(c.part, c.models, c.dbar, c.gains, c.h, c.roi, epsilon);
}

inline dynamics::Controller deployed_controller(const verify::DiscretePWA& sys) {
  return [&sys](const Vec& x) { return sys.gains[partition::locate(sys.part, x).sigma](x); };
}

inline Evaluation evaluate(const Config& cfg, const dynamics::PlantSpec& plant, const verify::DiscretePWA& sys,
                           const Mat& P, double level, std::vector<std::vector<Vec>>* rk4_paths = nullptr) {
  Evaluation ev;
  std::mt19937_64 rng(cfg.seed + 7);
  std::uniform_real_distribution<double> ux(sys.roi.lo[0], sys.roi.hi[0]), uy(sys.roi.lo[1], sys.roi.hi[1]);
  const int steps = static_cast<int>(std::lround(cfg.sim_seconds / cfg.h));
  const auto controller = deployed_controller(sys);
  const auto stage = control::CostSpec::affine(cfg.Q, cfg.R, cfg.gamma).stage();
  int attempts = 0;
  while (ev.euler_runs < cfg.trajectories) {
    if (++attempts > 1000 * std::max(1, cfg.trajectories)) throw ValidationError("evaluate: sublevel set too small to sample");
    Vec x0(2);
    x0 << ux(rng), uy(rng);
    if (verify::roa_value(P, sys, x0) > level) continue;
    const auto run = verify::simulate_euler(P, sys, x0, steps, true);
    ++ev.euler_runs;
    if (run.left_roi) ++ev.euler_left;
    if (!run.left_roi && run.reached_step >= 0) {
      ++ev.euler_reached;
      ev.euler_worst_reach_seconds = std::max(ev.euler_worst_reach_seconds, run.reached_step * cfg.h);
    }
    const auto traj = dynamics::simulate(plant, controller, x0, cfg.h, cfg.sim_seconds, stage, sys.roi);
    ++ev.rk4_runs;
    const double final_norm = traj.states.back().cwiseAbs().maxCoeff();
    ev.rk4_worst_final = std::max(ev.rk4_worst_final, traj.diverged ? std::numeric_limits<double>::infinity() : final_norm);
    if (!traj.diverged && final_norm <= 2.0 * sys.epsilon) ++ev.rk4_converged;
    if (rk4_paths && rk4_paths->size() < 20) rk4_paths->push_back(traj.states);
  }
  return ev;
}

inline json to_json(const Evaluation& ev) {
  return {{"euler_runs", ev.euler_runs},           {"euler_left_roi", ev.euler_left},
          {"euler_reached_epsilon", ev.euler_reached}, {"euler_worst_reach_seconds", ev.euler_worst_reach_seconds},
          {"rk4_runs", ev.rk4_runs},               {"rk4_converged_2eps", ev.rk4_converged},
          {"rk4_worst_final_inf_norm", ev.rk4_worst_final}};
}

inline void write_phase_portrait(const Output& out, const Config& cfg, const dynamics::PlantSpec& plant,
                                 const verify::DiscretePWA& sys, const verify::Roa* roa) {
  svg::Plot p;
  p.title = "Closed-loop phase portrait";
  p.xlabel = "theta";
  p.ylabel = "omega";
  p.xmin = sys.roi.lo[0];
  p.xmax = sys.roi.hi[0];
  p.ymin = sys.roi.lo[1];
  p.ymax = sys.roi.hi[1];
  const auto controller = deployed_controller(sys);
  const int N = 48;
  const Vec w = sys.roi.width() / N;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      Vec c(2);
      c << sys.roi.lo[0] + (i + 0.5) * w[0], sys.roi.lo[1] + (j + 0.5) * w[1];
      const Vec u = dynamics::saturate(controller(c), plant.u_bar);
      p.cells.push_back({c[0] - 0.5 * w[0], c[1] - 0.5 * w[1], c[0] + 0.5 * w[0], c[1] + 0.5 * w[1],
                         std::log1p(dynamics::eval_unchecked(plant, c, u).norm())});
    }
  const auto stage = control::CostSpec::affine(cfg.Q, cfg.R, cfg.gamma).stage();
  const int G = 7;
  std::ostringstream csv;
  csv.precision(12);
  csv << "trajectory,t,x1,x2\n";
  int id = 0;
  for (int i = 0; i < G; ++i)
    for (int j = 0; j < G; ++j) {
      Vec x0(2);
      x0 << sys.roi.lo[0] + (i + 0.5) * sys.roi.width()[0] / G, sys.roi.lo[1] + (j + 0.5) * sys.roi.width()[1] / G;
      const auto traj = dynamics::simulate(plant, controller, x0, cfg.h, 3.0, stage, sys.roi);
      svg::Series s;
      s.color = "#ffffff";
      s.width = 0.9;
      for (std::size_t k = 0; k < traj.states.size(); ++k) {
        s.x.push_back(traj.states[k][0]);
        s.y.push_back(traj.states[k][1]);
        if (k % 10 == 0) csv << id << ',' << traj.times[k] << ',' << traj.states[k][0] << ',' << traj.states[k][1] << '\n';
      }
      p.series.push_back(std::move(s));
      ++id;
    }
  if (roa)
    for (std::size_t k = 0; k < roa->contours.size(); ++k)
      p.series.push_back(closed_contour(roa->contours[k], k == 0 ? "ROA" : "", "#d62728"));
  out.svg_file("phase_portrait.svg", p);
  out.text("phase_portrait.csv", csv.str());
}

inline void write_roa(const Output& out, const verify::Roa& roa, const std::optional<verify::LqrBaseline>& lqr,
                      const Box& roi) {
  out.csv("roa.csv", [&](std::ostream& os) {
    os << "contour,x1,x2\n";
    for (std::size_t k = 0; k < roa.contours.size(); ++k)
      for (const auto& v : roa.contours[k]) os << k << ',' << v[0] << ',' << v[1] << '\n';
  });
  svg::Plot p;
  p.title = "Region of attraction";
  p.xlabel = "theta";
  p.ylabel = "omega";
  p.xmin = roi.lo[0];
  p.xmax = roi.hi[0];
  p.ymin = roi.lo[1];
  p.ymax = roi.hi[1];
  for (std::size_t k = 0; k < roa.contours.size(); ++k)
    p.series.push_back(closed_contour(roa.contours[k], k == 0 ? "PWA Lyapunov" : "", palette(1)));
  if (lqr && lqr->level > 0.0) p.series.push_back(ellipse(lqr->P, lqr->level, "LQR", palette(0)));
  svg::Series box{"ROI"};
  box.color = "#555555";
  box.x = {roi.lo[0], roi.hi[0], roi.hi[0], roi.lo[0], roi.lo[0]};
  box.y = {roi.lo[1], roi.lo[1], roi.hi[1], roi.hi[1], roi.lo[1]};
  p.series.push_back(box);
  out.svg_file("roa.svg", p);
}

inline void write_ceg_trace(const Output& out, const verify::CegResult& res) {
  out.csv("ceg_trace.csv", [&](std::ostream& os) {
    os << "iteration,status,upper,lower,margin,log_det_hessian,nodes,seconds\n";
    for (const auto& e : res.trace)
      os << e.iteration << ',' << verify::to_string(e.status) << ',' << e.upper << ',' << e.lower << ',' << e.margin << ','
         << e.log_det_hessian << ',' << e.nodes << ',' << e.seconds << '\n';
  });
}

inline json violations_json(const uncertainty::Violations& v) {
  return {{"probes", v.probes}, {"violations", v.count}, {"worst_ratio", v.worst_ratio}};
}

inline void write_failure(const Output& out, const std::string& stage, const std::exception& e) {
  std::string kind = "error";
  if (dynamic_cast<const ConfigError*>(&e)) kind = "config";
  else if (dynamic_cast<const DomainError*>(&e)) kind = "domain";
  else if (dynamic_cast<const ConsistencyError*>(&e)) kind = "consistency";
  else if (dynamic_cast<const ValidationError*>(&e)) kind = "validation";
  else if (dynamic_cast<const UnsupportedError*>(&e)) kind = "unsupported";
  else if (dynamic_cast<const NumericalError*>(&e)) kind = "numerical";
  out.json_file("failure.json", {{"stage", stage}, {"kind", kind}, {"message", e.what()}});
}

// Runs the stages up to opt.stop. Exceptions are caught, recorded in
// failure.json and reported through exit_code = 1; artifacts of earlier
// stages stay in place.
inline PendulumRun run_pendulum(const Config& cfg, const Output& out, const PipelineOptions& opt = {}) {
  using Clock = std::chrono::steady_clock;
  PendulumRun run;
  std::string stage = "config";
  auto lap = [&, t = Clock::now()](const std::string& name) mutable {
    const auto now = Clock::now();
    run.seconds.emplace_back(name, std::chrono::duration<double>(now - t).count());
    t = now;
    if (opt.verbose) std::clog << "pwlc: " << name << " done (" << run.seconds.back().second << " s)\n";
  };
  try {
    cfg.validate();
    const auto plant = cfg.make_plant();
    if (plant.n != 2) throw UnsupportedError("the certification pipeline needs a 2-state plant");
    out.json_file("config.json", config::to_json(cfg));
    const auto cost = control::CostSpec::affine(cfg.Q, cfg.R, cfg.gamma);
    if (opt.resume && opt.stop >= Stage::Certify) {
      stage = "resume";
      run.pwa = pwa_from_json(read_json(out.dir() / "pwa.json"));
      run.reached = Stage::Control;
    } else {
      stage = "identify";
      run.learned = train(cfg);
      auto& L = *run.learned;
      write_learning(out, L);
      if (cfg.write_samples) out.csv("samples.csv", [&](std::ostream& os) { L.db.write_csv(os); });
      lap("identify");
      run.reached = Stage::Identify;
      if (opt.stop == Stage::Identify) return run;

      stage = "bound";
      run.report = uncertainty::compute_report(L.plant, L.part, L.models, L.basis, L.db, report_options(cfg));
      out.json_file("uncertainty.json", uncertainty::to_json(run.report));
      out.csv("uncertainty.csv", [&](std::ostream& os) { uncertainty::write_heatmap_csv(os, run.report, L.part); });
      const auto dbar = run.report.bounds();
      for (const auto& piece : L.models) run.cell_models.push_back(identify::to_affine(piece, L.basis, L.plant.m));
      run.validation = uncertainty::validate_bound(L.plant, L.part, run.cell_models, dbar, cfg.validate_states, cfg.validate_inputs);
      std::vector<Vec> half;
      for (const auto& d : dbar) half.push_back(0.5 * d);
      run.negative_control = uncertainty::validate_bound(L.plant, L.part, run.cell_models, half, cfg.validate_states, cfg.validate_inputs);
      out.json_file("validation.json",
                    {{"bound", violations_json(run.validation)}, {"half_bound", violations_json(run.negative_control)}});
      lap("bound");
      run.reached = Stage::Bound;
      if (opt.stop == Stage::Bound) return run;

      stage = "control";
      for (std::size_t s = 0; s < L.part.size(); ++s)
        run.cell_gains.push_back(control::extract_affine_gains(L.vm.P[s], run.cell_models[s], cost.r, cfg.linear_only));
      out.json_file("value.json", control::to_json(L.vm, run.cell_gains));
      run.pwa = deployable(cfg, L, run.cell_models, dbar, run.cell_gains, run.stitched);
      out.json_file("pwa.json", to_json(run.pwa));
      lap("control");
      run.reached = Stage::Control;
      if (opt.stop == Stage::Control) return run;
    }

    stage = "certify";
    run.sys = discretize(run.pwa, cfg.epsilon);
    verify::CegOptions co;
    co.max_iterations = cfg.max_iterations;
    co.verify.threads = cfg.threads;
    co.verify.node_cap = cfg.node_cap;
    co.verify.gap = cfg.gap;
    if (opt.verbose)
      co.progress = [](const verify::CegTraceEntry& e) {
        std::clog << "pwlc: ceg " << e.iteration << ' ' << verify::to_string(e.status) << " upper " << e.upper << " lower "
                  << e.lower << " nodes " << e.nodes << '\n';
      };
    run.ceg = verify::ceg_loop(run.sys, co);
    run.certificate = {run.ceg.status, run.ceg.P, run.ceg.last.upper, run.ceg.last.lower,
                       static_cast<int>(run.ceg.trace.size()), cfg.epsilon};
    out.json_file("certificate.json", to_json(run.certificate));
    write_ceg_trace(out, run.ceg);
    lap("certify");
    run.reached = Stage::Certify;
    run.exit_code = exit_code(run.ceg.status);
    if (run.ceg.status != verify::CegStatus::Certified) {
      if (opt.stop == Stage::Roa) write_phase_portrait(out, cfg, plant, run.sys, nullptr);
      return run;
    }
    if (opt.stop == Stage::Certify) return run;

    stage = "roa";
    const Mat& P = run.ceg.P;
    run.roa = verify::roa_level(P, run.sys, cfg.roa_grid);
    const int origin = partition::locate(run.pwa.part, Vec::Zero(2)).sigma;
    run.lqr = verify::lqr_baseline(run.pwa.models[origin], cost, run.sys);
    Eigen::SelfAdjointEigenSolver<Mat> es(P);
    write_roa(out, *run.roa, run.lqr, run.sys.roi);
    write_phase_portrait(out, cfg, plant, run.sys, &*run.roa);
    run.evaluation = evaluate(cfg, plant, run.sys, P, run.roa->level);
    out.json_file("roa.json", {{"level", run.roa->level},
                               {"area", run.roa->area},
                               {"lqr_level", run.lqr->level},
                               {"lqr_area", run.lqr->area},
                               {"P_eigenvalues", identify::vec_to_json(es.eigenvalues())},
                               {"evaluation", to_json(run.evaluation)}});
    lap("roa");
    run.reached = Stage::Roa;
  } catch (const std::exception& e) {
    run.failed_stage = stage;
    run.error = e.what();
    run.exit_code = 1;
    write_failure(out, stage, e);
  }
  return run;
}

inline json summary_json(const PendulumRun& run) {
  json j{{"reached", to_string(run.reached)}, {"exit_code", run.exit_code}, {"stitched", run.stitched}};
  if (!run.failed_stage.empty()) j["failure"] = {{"stage", run.failed_stage}, {"message", run.error}};
  if (run.learned) j["samples"] = run.learned->samples;
  if (run.reached >= Stage::Bound && run.learned) {
    j["validation"] = violations_json(run.validation);
    j["negative_control"] = violations_json(run.negative_control);
  }
  if (run.reached >= Stage::Certify) j["certificate"] = to_json(run.certificate);
  if (run.roa) j["roa_area"] = run.roa->area;
  if (run.lqr) j["lqr_area"] = run.lqr->area;
  if (run.reached >= Stage::Roa) j["evaluation"] = to_json(run.evaluation);
  json t = json::object();
  for (const auto& [name, s] : run.seconds) t[name] = s;
  j["seconds"] = t;
  return j;
}

// ---------------------------------------------------------------------------
// Vehicle pipeline

struct Trend {
  double early = 0.0;  // mean over the first window
  double late = 0.0;  // mean over the last window
  double tail_slope = 0.0;  // least-squares slope over the second half
  bool decreasing() const { return late < early; }
};

inline Trend trend(const std::vector<double>& v, double window = 0.2) {
  Trend t;
  if (v.empty()) return t;
  const std::size_t w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(window * v.size())));
  for (std::size_t k = 0; k < w; ++k) {
    t.early += v[k] / w;
    t.late += v[v.size() - w + k] / w;
  }
  const std::size_t start = v.size() / 2, len = v.size() - start;
  if (len >= 2) {
    double mx = 0, my = 0;
    for (std::size_t k = start; k < v.size(); ++k) {
      mx += static_cast<double>(k) / len;
      my += v[k] / len;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t k = start; k < v.size(); ++k) {
      sxy += (k - mx) * (v[k] - my);
      sxx += (k - mx) * (k - mx);
    }
    t.tail_slope = sxx > 0 ? sxy / sxx : 0.0;
  }
  return t;
}

inline json to_json(const Trend& t) {
  return {{"early", t.early}, {"late", t.late}, {"tail_slope", t.tail_slope}, {"decreasing", t.decreasing()}};
}

struct VehicleRun {
  std::optional<Learned> learned;
  Trend distance;
  Trend value;
  Trend prediction_error;
  int exit_code = 0;
  std::string error;
};

inline svg::Series column_series(const std::vector<StepTrace>& tr, const std::string& label, const std::string& color,
                                 const std::function<double(const StepTrace&)>& y) {
  svg::Series s;
  s.label = label;
  s.color = color;
  for (const auto& st : tr) {
    s.x.push_back(st.t);
    s.y.push_back(y(st));
  }
  return s;
}

inline void write_vehicle_figures(const Output& out, const Config& cfg, const Learned& L) {
  write_trace_csv(out, "episode_first.csv", L.first_episode);
  write_trace_csv(out, "episode_last.csv", L.last_episode);
  // Fig 6a: paths and distance to goal.
  svg::Plot path;
  path.title = "Vehicle path relative to the goal";
  path.xlabel = "x - x_goal";
  path.ylabel = "y - y_goal";
  const int ix = cfg.goal_states.size() >= 2 ? cfg.goal_states[0] : 0;
  const int iy = cfg.goal_states.size() >= 2 ? cfg.goal_states[1] : 1;
  path.series.push_back(column_series(L.first_episode, "first episode", palette(0), [&](const StepTrace& s) { return s.x[iy]; }));
  path.series.back().x.clear();
  for (const auto& s : L.first_episode) path.series.back().x.push_back(s.x[ix]);
  path.series.push_back(column_series(L.last_episode, "last episode", palette(1), [&](const StepTrace& s) { return s.x[iy]; }));
  path.series.back().x.clear();
  for (const auto& s : L.last_episode) path.series.back().x.push_back(s.x[ix]);
  svg::Series goal{"goal"};
  goal.x = {0.0};
  goal.y = {0.0};
  goal.points = true;
  goal.color = "#000000";
  path.series.push_back(goal);
  out.svg_file("vehicle_path.svg", path);

  svg::Plot states;
  states.title = "Last episode: distance to goal and input";
  states.xlabel = "t [s]";
  states.ylabel = "value";
  states.series.push_back(column_series(L.last_episode, "distance / 10", palette(0),
                                        [&](const StepTrace& s) { return goal_distance(cfg, s.x) / 10.0; }));
  states.series.push_back(column_series(L.last_episode, "steering", palette(1), [](const StepTrace& s) { return s.u[0]; }));
  states.series.push_back(column_series(L.last_episode, "heading", palette(2), [](const StepTrace& s) { return s.x[s.x.size() - 1]; }));
  out.svg_file("vehicle_states.svg", states);

  // Fig 6b: learning traces per episode and the last episode's mode sequence.
  svg::Plot learn;
  learn.title = "Learning traces (normalized by first episode)";
  learn.xlabel = "episode";
  learn.ylabel = "ratio";
  const auto& eps = L.episodes;
  auto per_episode = [&](const std::string& label, const std::string& color, auto field) {
    svg::Series s;
    s.label = label;
    s.color = color;
    const double base = std::max(1e-300, std::abs(field(eps.front())));
    for (const auto& e : eps) {
      s.x.push_back(static_cast<double>(e.episode));
      s.y.push_back(field(e) / base);
    }
    return s;
  };
  if (!eps.empty()) {
    learn.series.push_back(per_episode("mean distance", palette(0), [](const EpisodeLog& e) { return e.mean_distance; }));
    learn.series.push_back(per_episode("mean value", palette(1), [](const EpisodeLog& e) { return e.mean_final_value; }));
    learn.series.push_back(
        per_episode("prediction error", palette(2), [](const EpisodeLog& e) { return e.mean_prediction_error; }));
  }
  out.svg_file("vehicle_learning.svg", learn);
  svg::Plot modes;
  modes.title = "Last episode: active mode and value";
  modes.xlabel = "t [s]";
  modes.ylabel = "mode";
  modes.series.push_back(column_series(L.last_episode, "mode", palette(3), [](const StepTrace& s) { return s.sigma; }));
  out.svg_file("vehicle_modes.svg", modes);

  // Fig 6c: prediction against truth for the lateral dynamics.
  svg::Plot pred;
  pred.title = "Last episode: identified vs true derivative";
  pred.xlabel = "t [s]";
  pred.ylabel = "derivative";
  pred.series.push_back(column_series(L.last_episode, "v_y' true", palette(0), [](const StepTrace& s) { return s.truth[0]; }));
  pred.series.push_back(column_series(L.last_episode, "v_y' model", palette(1), [](const StepTrace& s) { return s.predicted[0]; }));
  pred.series.push_back(column_series(L.last_episode, "r' true", palette(2), [](const StepTrace& s) { return s.truth[1]; }));
  pred.series.push_back(column_series(L.last_episode, "r' model", palette(3), [](const StepTrace& s) { return s.predicted[1]; }));
  out.svg_file("vehicle_prediction.svg", pred);
}

inline VehicleRun run_vehicle(const Config& cfg, const Output& out, bool verbose = false) {
  VehicleRun run;
  std::string stage = "config";
  try {
    cfg.validate();
    out.json_file("config.json", config::to_json(cfg));
    stage = "identify";
    TrainOptions to;
    to.stage_reports = false;
    to.keep_states = true;
    if (verbose)
      to.on_episode = [](const EpisodeLog& e) {
        std::clog << "pwlc: episode " << e.episode << " distance " << e.mean_distance << " value " << e.mean_value
                  << " error " << e.mean_prediction_error << '\n';
      };
    run.learned = train(cfg, to);
    const auto& L = *run.learned;
    identify::ModelSet ms{identify::BasisKind::Affine, L.plant.n, L.plant.m, L.models};
    out.json_file("models.json", identify::to_json(ms));
    out.json_file("value.json", control::to_json(L.vm));
    write_episodes(out, L.episodes);
    stage = "figures";
    write_vehicle_figures(out, cfg, L);
    std::vector<double> d, v, p;
    for (const auto& e : L.episodes) {
      d.push_back(e.mean_distance);
      v.push_back(e.mean_final_value);
      p.push_back(e.mean_prediction_error);
    }
    run.distance = trend(d);
    run.value = trend(v);
    run.prediction_error = trend(p);
    out.json_file("trends.json", {{"distance", to_json(run.distance)},
                                  {"value", to_json(run.value)},
                                  {"prediction_error", to_json(run.prediction_error)},
                                  {"samples", L.samples}});
  } catch (const std::exception& e) {
    run.exit_code = 1;
    run.error = e.what();
    write_failure(out, stage, e);
  }
  return run;
}

// ---------------------------------------------------------------------------
// Step-time benchmark

struct Percentiles {
  double p50 = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
  double max = 0.0;
};

inline Percentiles percentiles(std::vector<double> v) {
  Percentiles p;
  if (v.empty()) return p;
  std::sort(v.begin(), v.end());
  auto at = [&](double q) { return v[std::min(v.size() - 1, static_cast<std::size_t>(q * (v.size() - 1) + 0.5))]; };
  p.p50 = at(0.5);
  p.p90 = at(0.9);
  p.p99 = at(0.99);
  p.max = v.back();
  return p;
}

struct BenchResult {
  std::string plant;
  std::vector<double> identify_seconds;
  std::vector<double> control_seconds;
  Percentiles identify;
  Percentiles control;
};

// Times rls_update (identify) and feedback + riccati_step (control) over a
// shortened learning run of the given configuration.
inline BenchResult bench(Config cfg, long steps) {
  cfg.training.episodes = std::max(1L, steps / cfg.training.steps);
  cfg.training.report_stages = {1.0};
  TrainOptions to;
  to.time_steps = true;
  to.stage_reports = false;
  auto L = train(cfg, to);
  BenchResult r;
  r.plant = cfg.plant;
  r.identify = percentiles(L.identify_seconds);
  r.control = percentiles(L.control_seconds);
  r.identify_seconds = std::move(L.identify_seconds);
  r.control_seconds = std::move(L.control_seconds);
  return r;
}

inline void write_bench(const Output& out, const std::vector<BenchResult>& results) {
  out.csv("bench.csv", [&](std::ostream& os) {
    os << "plant,step,samples,p50_ms,p90_ms,p99_ms,max_ms\n";
    for (const auto& r : results)
      for (const auto& [name, pc, n] : {std::tuple{"identify", r.identify, r.identify_seconds.size()},
                                        std::tuple{"control", r.control, r.control_seconds.size()}})
        os << r.plant << ',' << name << ',' << n << ',' << 1e3 * pc.p50 << ',' << 1e3 * pc.p90 << ',' << 1e3 * pc.p99 << ','
           << 1e3 * pc.max << '\n';
  });
  svg::Plot p;
  p.title = "Per-step update time (empirical CDF)";
  p.xlabel = "log10 time [ms]";
  p.ylabel = "fraction of steps";
  std::size_t k = 0;
  for (const auto& r : results)
    for (const auto& [name, v] : {std::pair{"identify", &r.identify_seconds}, std::pair{"control", &r.control_seconds}}) {
      std::vector<double> sorted = *v;
      std::sort(sorted.begin(), sorted.end());
      svg::Series s;
      s.label = r.plant + " " + name;
      s.color = palette(k++);
      const std::size_t stride = std::max<std::size_t>(1, sorted.size() / 400);
      for (std::size_t i = 0; i < sorted.size(); i += stride) {
        s.x.push_back(std::log10(std::max(1e-6, 1e3 * sorted[i])));
        s.y.push_back(static_cast<double>(i + 1) / sorted.size());
      }
      p.series.push_back(std::move(s));
    }
  out.svg_file("bench.svg", p);
  json j = json::array();
  for (const auto& r : results)
    j.push_back({{"plant", r.plant},
                 {"identify_p50_ms", 1e3 * r.identify.p50},
                 {"control_p50_ms", 1e3 * r.control.p50},
                 {"identify_p99_ms", 1e3 * r.identify.p99},
                 {"control_p99_ms", 1e3 * r.control.p99}});
  out.json_file("bench.json", j);
}

}  // namespace pwlc::harness
