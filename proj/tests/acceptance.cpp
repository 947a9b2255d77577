// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails. Pass criterion numbers as
// arguments to run a subset.
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <set>

#include "pwlc/pwlc.hpp"

using namespace pwlc;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

fs::path out_root() { return fs::path(PWLC_ACCEPT_DIR); }

// ---------------------------------------------------------------------------
// 1. Identification correctness

Verdict identification() {
  Verdict v;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> U(-1, 1);
  double worst = 0.0;
  int instances = 0;
  for (int rep = 0; rep < 10; ++rep) {
    for (int n : {1, 2, 3}) {
      for (int m : {1, 2}) {
        const auto basis = identify::BasisSet::affine(n);
        const int q = identify::regressor_size(basis, m);
        Mat W(n, q);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < q; ++j) W(i, j) = 2 * U(rng);
        Mat T(q, 200), D(n, 200);
        auto pm = identify::PieceModel::zero(n, basis.p, m);
        for (int k = 0; k < 200; ++k) {
          Vec x(n), u(m);
          for (int i = 0; i < n; ++i) x[i] = 3 * U(rng);
          for (int j = 0; j < m; ++j) u[j] = 2 * U(rng);
          T.col(k) = identify::regressor(basis, x, u);
          Vec d = W * T.col(k);
          for (int i = 0; i < n; ++i) d[i] += 0.1 * U(rng);
          D.col(k) = d;
          identify::rls_update(pm, T.col(k), D.col(k));
        }
        const Mat batch = identify::batch_ls(T, D);
        worst = std::max(worst, (pm.weights - batch).norm() / batch.norm());
        ++instances;
      }
    }
  }
  v.check(worst <= 1e-6, "RLS vs batch on " + std::to_string(instances) + " instances: worst relative " + fmt(worst));

  // Noiseless data from a known 3x3-cell PWA plant.
  const auto basis = identify::BasisSet::affine(2);
  auto part = partition::make_grid_partition(Box(Vec::Constant(2, -3), Vec::Constant(2, 3)), std::vector<int>{3, 3});
  std::vector<AffineModel> truth;
  for (std::size_t s = 0; s < part.size(); ++s) {
    AffineModel am{Mat(2, 2), Mat(2, 1), Vec(2)};
    for (int i = 0; i < 2; ++i) {
      am.A(i, 0) = 3 * U(rng);
      am.A(i, 1) = 3 * U(rng);
      am.B(i, 0) = 3 * U(rng);
      am.C[i] = U(rng);
    }
    truth.push_back(am);
  }
  std::vector<identify::PieceModel> models(part.size(), identify::PieceModel::zero(2, basis.p, 1));
  for (int k = 0; k < 30000; ++k) {
    Vec x(2), u(1);
    x << 3 * U(rng), 3 * U(rng);
    u << 6 * U(rng);
    const int s = partition::locate(part, x).sigma;
    identify::rls_update(models[s], identify::regressor(basis, x, u), truth[s](x, u));
  }
  double err = 0.0;
  for (std::size_t s = 0; s < part.size(); ++s) {
    const auto am = identify::to_affine(models[s], basis, 1);
    err = std::max({err, (am.A - truth[s].A).cwiseAbs().maxCoeff(), (am.B - truth[s].B).cwiseAbs().maxCoeff(),
                    (am.C - truth[s].C).cwiseAbs().maxCoeff()});
  }
  v.check(err <= 1e-8, "exact recovery of a 9-piece affine plant: max coefficient error " + fmt(err));
  const double secs = since(t0);
  v.check(secs < 60.0, "runtime " + fmt(secs) + " s (budget 60 s)");
  return v;
}

// ---------------------------------------------------------------------------
// 2, 5, 6. Pendulum pipeline

struct PendulumOutcome {
  harness::PendulumRun run;
  config::Config cfg;
};

const PendulumOutcome& pendulum_run() {
  static std::optional<PendulumOutcome> cached;
  if (!cached) {
    PendulumOutcome po;
    po.cfg = config::pendulum_defaults();
    po.cfg.output = (out_root() / "pendulum").string();
    harness::Output out(po.cfg.output);
    harness::PipelineOptions opt;
    opt.verbose = true;
    po.run = harness::run_pendulum(po.cfg, out, opt);
    cached = std::move(po);
  }
  return *cached;
}

double stage_seconds(const harness::PendulumRun& run, const std::string& name) {
  for (const auto& [n, s] : run.seconds)
    if (n == name) return s;
  return std::numeric_limits<double>::quiet_NaN();
}

Verdict uncertainty_soundness() {
  Verdict v;
  const auto& [run, cfg] = pendulum_run();
  v.check(run.reached >= harness::Stage::Bound, "pipeline reached the bound stage" + (run.error.empty() ? "" : ": " + run.error));
  if (run.reached < harness::Stage::Bound) return v;
  v.check(run.validation.probes == 101u * 101u * 11u, "probe grid 101 x 101 x 11 (" + std::to_string(run.validation.probes) + ")");
  v.check(run.validation.count == 0, "violations of the bound: " + std::to_string(run.validation.count) +
                                           " (worst ratio " + fmt(run.validation.worst_ratio) + ")");
  v.check(run.negative_control.count > 0, "violations of half the bound: " + std::to_string(run.negative_control.count));
  const double secs = stage_seconds(run, "bound");
  v.check(secs < 300.0, "bound stage " + fmt(secs) + " s (budget 300 s)");
  return v;
}

Verdict pendulum_end_to_end() {
  Verdict v;
  const auto& [run, cfg] = pendulum_run();
  Mat Q(2, 2);
  Q << 2, 0, 0, 1;
  v.check(cfg.h == 0.005 && cfg.Q == Q && cfg.R.size() == 1 && cfg.R[0] == 1.0 &&
              cfg.roi.lo == Vec::Constant(2, -6) && cfg.roi.hi == Vec::Constant(2, 6),
          "h = 5 ms, Q = diag(2, 1), R = 1, region [-6, 6]^2");
  v.check(run.reached >= harness::Stage::Certify, "pipeline reached certification" + (run.error.empty() ? "" : ": " + run.error));
  if (run.reached < harness::Stage::Certify) return v;
  v.check(run.certificate.status == verify::CegStatus::Certified,
          std::string("status ") + verify::to_string(run.certificate.status) + " after " +
              std::to_string(run.certificate.iterations) + " iterations");
  v.check(run.certificate.upper < 0.0, "verified maximum upper bound " + fmt(run.certificate.upper));
  if (run.certificate.P.size()) {
    Eigen::SelfAdjointEigenSolver<Mat> es(run.certificate.P);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    v.check(lo >= -1e-12 && hi <= 1.0 + 1e-12, "eigenvalues of P in [" + fmt(lo) + ", " + fmt(hi) + "]");
  } else {
    v.check(false, "no candidate matrix returned");
  }
  if (run.roa && run.lqr)
    v.check(run.roa->area > run.lqr->area, "ROA area " + fmt(run.roa->area) + " vs LQR baseline " + fmt(run.lqr->area));
  else
    v.check(false, "ROA or LQR baseline missing");
  double total = 0.0;
  for (const auto& [n, s] : run.seconds) total += s;
  v.check(total <= 1800.0, "pipeline " + fmt(total) + " s (budget 1800 s)");
  return v;
}

Verdict closed_loop() {
  Verdict v;
  const auto& [run, cfg] = pendulum_run();
  v.check(run.reached == harness::Stage::Roa, "pipeline reached the ROA stage");
  if (run.reached != harness::Stage::Roa) return v;
  const auto& ev = run.evaluation;
  v.check(ev.euler_runs == 100, "Euler trajectories: " + std::to_string(ev.euler_runs));
  v.check(ev.euler_left == 0, "Euler trajectories leaving the region: " + std::to_string(ev.euler_left));
  v.check(ev.euler_reached == ev.euler_runs && ev.euler_worst_reach_seconds <= 10.0,
          "Euler trajectories reaching the epsilon box: " + std::to_string(ev.euler_reached) + " (slowest " +
              fmt(ev.euler_worst_reach_seconds) + " s)");
  v.check(ev.rk4_runs == 100 && ev.rk4_converged == ev.rk4_runs,
          "RK4 trajectories within 2 epsilon at 10 s: " + std::to_string(ev.rk4_converged) + "/" +
              std::to_string(ev.rk4_runs) + " (worst " + fmt(ev.rk4_worst_final) + ")");
  const double secs = stage_seconds(run, "roa");
  v.check(secs < 300.0, "ROA and evaluation " + fmt(secs) + " s (budget 300 s)");
  return v;
}

// ---------------------------------------------------------------------------
// 3. Empty-ball exactness

Verdict empty_ball() {
  Verdict v;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> U(0, 1);
  double worst_excess = 0.0, worst_deficit = 0.0;
  int bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const double w = 0.5 + 2.0 * U(rng), h = 0.5 + 2.0 * U(rng);
    const double x0 = -U(rng), y0 = -U(rng);
    geometry::Polygon poly{{x0, y0}, {x0 + w, y0}, {x0 + w, y0 + h}, {x0, y0 + h}};
    std::vector<Eigen::Vector2d> sites;
    const int count = 1 + (trial * 7) % 60;
    for (int k = 0; k < count; ++k) {
      switch (trial % 4) {
        case 0: sites.emplace_back(x0 + w * U(rng), y0 + h * U(rng)); break;
        case 1: sites.emplace_back(x0 + w * (0.4 + 0.2 * U(rng)), y0 + h * (0.4 + 0.2 * U(rng))); break;  // cluster
        case 2: sites.emplace_back(x0 + w * U(rng), y0 + 0.5 * h); break;  // collinear
        default: sites.emplace_back(x0 + w * std::round(4 * U(rng)) / 4, y0 + h * std::round(4 * U(rng)) / 4); break;  // duplicates on a lattice
      }
    }
    const auto ball = geometry::largest_empty_circle(sites, poly);
    const int N = 400;
    double grid = 0.0;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        const Eigen::Vector2d g(x0 + w * i / (N - 1), y0 + h * j / (N - 1));
        double d = std::numeric_limits<double>::infinity();
        for (const auto& s : sites) d = std::min(d, (s - g).norm());
        grid = std::max(grid, d);
      }
    const double half_diag = 0.5 * std::hypot(w / (N - 1), h / (N - 1));
    double at_center = std::numeric_limits<double>::infinity();
    for (const auto& s : sites) at_center = std::min(at_center, (s - Eigen::Vector2d(ball.center[0], ball.center[1])).norm());
    const bool inside = ball.center[0] >= x0 - 1e-9 && ball.center[0] <= x0 + w + 1e-9 && ball.center[1] >= y0 - 1e-9 &&
                        ball.center[1] <= y0 + h + 1e-9;
    worst_deficit = std::max(worst_deficit, grid - ball.radius);
    worst_excess = std::max(worst_excess, ball.radius - grid - half_diag);
    if (ball.radius < grid - 1e-12 || ball.radius > grid + half_diag + 1e-12 || !inside ||
        std::abs(at_center - ball.radius) > 1e-9)
      ++bad;
  }
  v.check(bad == 0, "50 instances within grid tolerance: " + std::to_string(50 - bad) + " agree (max shortfall " +
                        fmt(worst_deficit) + ", max excess over tolerance " + fmt(worst_excess) + ")");
  const double secs = since(t0);
  v.check(secs < 120.0, "runtime " + fmt(secs) + " s (budget 120 s)");
  return v;
}

// ---------------------------------------------------------------------------
// 4. Verifier global optimality

verify::DiscretePWA toy_system(const Box& domain, const std::vector<std::vector<double>>& breaks,
                               const std::vector<std::pair<Mat, Vec>>& maps, const std::vector<Vec>& dbar, double eps) {
  verify::DiscretePWA sys;
  sys.part = partition::make_grid_partition(domain, breaks);
  const int n = domain.dim();
  for (std::size_t s = 0; s < sys.part.size(); ++s) {
    sys.models.push_back({maps[s].first, Mat::Zero(n, 1), maps[s].second});
    sys.gains.push_back({Mat::Zero(1, n), Vec::Zero(1)});
    sys.dbar.push_back(dbar[s]);
  }
  sys.roi = domain;
  sys.epsilon = eps;
  sys.h = 1.0;
  sys.close_loop();
  return sys;
}

Mat random_candidate(int N, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-1, 1);
  Mat M(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) M(i, j) = U(rng);
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(M));
  Vec ev(N);
  for (int i = 0; i < N; ++i) ev[i] = 0.05 + 0.45 * (U(rng) + 1);
  return symmetrized(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

struct DenseMax {
  double value = -std::numeric_limits<double>::infinity();
  double tolerance = 0.0;
  long points = 0;
};

// Grid over x0 (aligned with the cell breakpoints and the epsilon box) and
// over each disturbance box with `dlevels` levels per component. The
// tolerance is a Lipschitz bound of DeltaV times the covering radius.
DenseMax dense_grid_max(const Mat& P, const verify::DiscretePWA& sys, int per_axis, int dlevels) {
  const int n = sys.dim();
  DenseMax out;
  const double tol = sys.part.tol();
  double dmax = 0.0, amax = 0.0, cmax = 0.0;
  for (std::size_t s = 0; s < sys.modes(); ++s) {
    dmax = std::max(dmax, sys.dbar[s].cwiseAbs().maxCoeff());
    amax = std::max(amax, sys.Acl[s].operatorNorm());
    cmax = std::max(cmax, sys.ccl[s].norm());
  }
  const double rx = sys.roi.lo.cwiseAbs().cwiseMax(sys.roi.hi.cwiseAbs()).norm();
  const double rd = std::sqrt(n) * dmax;
  const double r2 = amax * rx + cmax + rd;
  const double grad = 2.0 * P.operatorNorm() * (std::hypot(rx, r2) + std::hypot(rx, rx));
  const double hx = 0.5 * std::sqrt(n) * sys.roi.width().maxCoeff() / (per_axis - 1);
  const double hd = 0.5 * std::sqrt(n) * 2.0 * dmax / (dlevels - 1);
  out.tolerance = grad * (std::sqrt(1 + amax * amax + std::pow(amax, 4)) * hx + std::sqrt(1 + amax * amax) * hd + hd);

  long dcount = 1;
  for (int i = 0; i < n; ++i) dcount *= dlevels;
  auto level = [&](long code, const Vec& bound) {
    Vec d(n);
    for (int i = 0; i < n; ++i) {
      const long li = code % dlevels;
      code /= dlevels;
      d[i] = -bound[i] + 2.0 * bound[i] * li / (dlevels - 1);
    }
    return d;
  };
  std::vector<int> idx(n, 0);
  for (;;) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = sys.roi.lo[i] + sys.roi.width()[i] * idx[i] / (per_axis - 1);
    if (x.cwiseAbs().maxCoeff() >= sys.epsilon - 1e-12) {
      for (int s0 : verify::modes_at(sys, x, tol)) {
        for (long a = 0; a < dcount; ++a) {
          const Vec x1 = verify::closed_loop_step(sys, x, level(a, sys.dbar[s0]), s0);
          if (!sys.part.domain.contains(x1, tol)) continue;
          for (int s1 : verify::modes_at(sys, x1, tol)) {
            for (long b = 0; b < dcount; ++b) {
              const Vec x2 = verify::closed_loop_step(sys, x1, level(b, sys.dbar[s1]), s1);
              out.value = std::max(out.value, verify::delta_v(P, x, x1, x2));
              ++out.points;
            }
          }
        }
      }
    }
    int ax = n - 1;
    while (ax >= 0 && ++idx[ax] >= per_axis) idx[ax--] = 0;
    if (ax < 0) break;
  }
  return out;
}

Verdict verifier_optimality() {
  Verdict v;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(404);
  auto box = [](int n, double a, double b) { return Box(Vec::Constant(n, a), Vec::Constant(n, b)); };
  auto scalar = [](double a) { return Mat::Constant(1, 1, a); };
  int agree = 0, total = 0;
  std::string worst, failed;
  double worst_ratio = 0.0;
  auto compare = [&](const std::string& name, const Mat& P, const verify::DiscretePWA& sys, int per_axis, int dlevels) {
    const auto out = verify::miqp_verify(P, sys);
    const auto grid = dense_grid_max(P, sys, per_axis, dlevels);
    // The verifier's tolerance: absolute gap, or relative on a positive maximum.
    const double delta = std::max(out.gap, verify::VerifyOptions{}.rel_gap * std::max(0.0, out.lower));
    const bool sound = out.upper >= grid.value - 1e-9;
    const bool tight = out.upper <= grid.value + delta + grid.tolerance;
    // A certified run stops once the upper bound is negative; otherwise the gap must close.
    const bool closed = out.status == verify::Status::Certified ||
                        (out.status != verify::Status::GapLimit && out.upper - out.lower <= delta + 1e-12);
    const bool sign = out.status != verify::Status::Certified || grid.value < 0.0;
    ++total;
    if (sound && tight && closed && sign) {
      ++agree;
    } else {
      failed += (failed.empty() ? "" : "; ") + name + " (" + (sound ? "" : "unsound ") + (tight ? "" : "loose ") +
                (closed ? "" : "gap open ") + (sign ? "" : "sign ") + "upper " + fmt(out.upper) + ", lower " +
                fmt(out.lower) + ", grid " + fmt(grid.value) + ", status " + std::string(verify::to_string(out.status)) + ")";
    }
    const double ratio = (out.upper - grid.value) / std::max(1e-12, delta + grid.tolerance);
    if (ratio > worst_ratio || worst.empty()) {
      worst_ratio = std::max(worst_ratio, ratio);
      worst = name + ": verifier " + fmt(out.upper) + ", grid " + fmt(grid.value) + " over " + std::to_string(grid.points) +
              " points, tolerance " + fmt(delta + grid.tolerance);
    }
    return out;
  };

  // 1-D, two modes, continuous disturbance grid.
  const auto sys1 = toy_system(box(1, -2, 2), {{-2, 0.4, 2}},
                               {{scalar(0.7), Vec::Constant(1, 0.05)}, {scalar(-0.9), Vec::Constant(1, 0.1)}},
                               {Vec::Constant(1, 0.08), Vec::Constant(1, 0.03)}, 0.2);
  for (int k = 0; k < 5; ++k) compare("1-D random candidate " + std::to_string(k), random_candidate(2, rng), sys1, 2001, 21);

  // 2-D, four modes.
  std::uniform_real_distribution<double> U(-0.2, 0.2);
  std::vector<std::pair<Mat, Vec>> maps;
  std::vector<Vec> dbar;
  for (int s = 0; s < 4; ++s) {
    Mat A(2, 2);
    A << 0.9 + U(rng), 0.1 + U(rng), -0.1 + U(rng), 0.85 + U(rng);
    Vec c(2);
    c << 0.1 * U(rng), 0.1 * U(rng);
    maps.emplace_back(A, c);
    dbar.push_back(Vec::Constant(2, 0.02 + 0.05 * std::abs(U(rng))));
  }
  const auto sys2 = toy_system(box(2, -1, 1), {{-1, 0.1, 1}, {-1, -0.2, 1}}, maps, dbar, 0.15);
  for (int k = 0; k < 3; ++k) compare("2-D random candidate " + std::to_string(k), random_candidate(4, rng), sys2, 201, 3);

  // Certified instances: the grid maximum must be negative.
  int certified = 0;
  Mat As(2, 2);
  As << 0.95, 0.05, -0.05, 0.9;
  const auto stable2 = toy_system(box(2, -1, 1), {{-1, 1}, {-1, 1}}, {{As, Vec::Zero(2)}}, {Vec::Constant(2, 0.002)}, 0.1);
  const auto stable1 = toy_system(box(1, -1, 1), {{-1, 0.2, 1}}, {{scalar(0.8), Vec::Zero(1)}, {scalar(0.6), Vec::Zero(1)}},
                                  {Vec::Constant(1, 0.01), Vec::Constant(1, 0.01)}, 0.1);
  for (const auto* sys : {&stable1, &stable2}) {
    const auto ceg = verify::ceg_loop(*sys);
    if (ceg.status != verify::CegStatus::Certified) continue;
    ++certified;
    compare(std::string(sys->dim() == 1 ? "1-D" : "2-D") + " certified candidate", ceg.P, *sys,
            sys->dim() == 1 ? 2001 : 201, sys->dim() == 1 ? 21 : 3);
  }
  v.check(certified == 2, "certified toy instances: " + std::to_string(certified) + "/2");
  v.check(agree == total, std::to_string(agree) + "/" + std::to_string(total) +
                              " instances agree with the grid oracle; largest discrepancy " + worst +
                              (failed.empty() ? "" : "; disagreeing: " + failed));
  const double secs = since(t0);
  v.check(secs < 600.0, "runtime " + fmt(secs) + " s (budget 600 s)");
  return v;
}

// ---------------------------------------------------------------------------
// 7. Negative certification

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PWLC_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

harness::PwaCheckpoint linear_checkpoint(const Mat& A, double dbar, double h) {
  harness::PwaCheckpoint c;
  c.part = partition::make_grid_partition(Box(Vec::Constant(2, -1), Vec::Constant(2, 1)), std::vector<int>{1, 1});
  c.models.push_back({A, Mat::Zero(2, 1), Vec::Zero(2)});
  c.dbar.push_back(Vec::Constant(2, dbar));
  c.gains.push_back({Mat::Zero(1, 2), Vec::Zero(1)});
  c.h = h;
  c.roi = c.part.domain;
  c.u_bar = Vec::Constant(1, 1.0);
  return c;
}

Verdict negative_certification() {
  Verdict v;
  const auto t0 = Clock::now();
  // x+ = 2x as a discrete system.
  verify::DiscretePWA sys = toy_system(Box(Vec::Constant(1, -4), Vec::Constant(1, 4)), {{-4, 4}},
                                       {{Mat::Constant(1, 1, 2.0), Vec::Zero(1)}}, {Vec::Zero(1)}, 0.1);
  const auto ceg = verify::ceg_loop(sys);
  v.check(ceg.status == verify::CegStatus::NoCertificate && harness::exit_code(ceg.status) == 2,
          std::string("x+ = 2x: ") + verify::to_string(ceg.status) + ", exit code " + std::to_string(harness::exit_code(ceg.status)));

  // The same through the command line: continuous A = I with h = 1 gives x+ = 2x.
  const fs::path expanding = out_root() / "expanding";
  fs::remove_all(expanding);
  harness::Output(expanding).json_file("pwa.json", harness::to_json(linear_checkpoint(Mat::Identity(2, 2), 0.0, 1.0)));
  const int code_expanding = run_cli("certify --resume --quiet --out-dir " + expanding.string());
  v.check(code_expanding == 2, "pwlc certify on x+ = 2x exits with " + std::to_string(code_expanding));

  // x+ = x with no disturbance: Delta V is identically zero for every P, so the
  // bound sits inside [-delta, delta] and no strict decrease can be shown.
  const fs::path neutral = out_root() / "gap_limit";
  fs::remove_all(neutral);
  harness::Output(neutral).json_file("pwa.json", harness::to_json(linear_checkpoint(Mat::Zero(2, 2), 0.0, 0.1)));
  const int code_neutral = run_cli("certify --resume --quiet --out-dir " + neutral.string());
  std::string status = "?";
  if (fs::exists(neutral / "certificate.json"))
    status = harness::read_json(neutral / "certificate.json").at("status").get<std::string>();
  v.check(code_neutral == 3 && status == "gap_limit",
          "pwlc certify on x+ = x exits with " + std::to_string(code_neutral) + " (status " + status + ")");

  Mat A(2, 2);
  A << -1.0, 0.5, -0.5, -1.0;
  const fs::path stable = out_root() / "stable";
  fs::remove_all(stable);
  harness::Output(stable).json_file("pwa.json", harness::to_json(linear_checkpoint(A, 0.05, 0.1)));
  const int code_stable = run_cli("certify --resume --quiet --out-dir " + stable.string());
  v.check(code_stable == 0, "a contracting system with disturbance exits with " + std::to_string(code_stable));
  const double secs = since(t0);
  v.check(secs < 120.0, "runtime " + fmt(secs) + " s (budget 120 s)");
  return v;
}

// ---------------------------------------------------------------------------
// 8. Runtime

Verdict runtime() {
  Verdict v;
  const auto t0 = Clock::now();
  std::vector<harness::BenchResult> results;
  for (const char* name : {"pendulum", "vehicle"}) {
    results.push_back(harness::bench(config::defaults_for(name), 20000));
    const auto& r = results.back();
    v.check(r.identify.p50 <= 1e-3, r.plant + " identify p50 " + fmt(1e3 * r.identify.p50) + " ms over " +
                                         std::to_string(r.identify_seconds.size()) + " steps (limit 1 ms)");
    v.check(r.control.p50 <= 20e-3, r.plant + " control p50 " + fmt(1e3 * r.control.p50) + " ms (limit 20 ms)");
  }
  harness::write_bench(harness::Output(out_root() / "bench"), results);
#ifdef NDEBUG
  v.check(true, "optimized build");
#else
  v.check(false, "optimized build (NDEBUG not set)");
#endif
  const double secs = since(t0);
  v.check(secs < 300.0, "runtime " + fmt(secs) + " s (budget 300 s)");
  return v;
}

// ---------------------------------------------------------------------------
// 9. Vehicle learning

Verdict vehicle_learning() {
  Verdict v;
  const auto t0 = Clock::now();
  auto cfg = config::vehicle_defaults();
  cfg.output = (out_root() / "vehicle").string();
  const auto run = harness::run_vehicle(cfg, harness::Output(cfg.output), false);
  v.check(run.exit_code == 0, "vehicle run completed" + (run.error.empty() ? "" : ": " + run.error));
  if (run.exit_code) return v;
  auto line = [](const char* what, const harness::Trend& t) {
    return std::string(what) + " early " + fmt(t.early) + ", late " + fmt(t.late);
  };
  v.check(run.distance.decreasing(), line("distance to goal", run.distance));
  v.check(run.value.decreasing(), line("value", run.value));
  v.check(run.prediction_error.decreasing(), line("prediction error", run.prediction_error));
  const double secs = since(t0);
  v.check(secs < 600.0, "runtime " + fmt(secs) + " s (budget 600 s)");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    Verdict (*run)();
  };
  const Criterion all[] = {{1, "identification correctness", identification},
                           {2, "uncertainty soundness", uncertainty_soundness},
                           {3, "empty-ball exactness", empty_ball},
                           {4, "verifier global optimality", verifier_optimality},
                           {5, "pendulum end to end", pendulum_end_to_end},
                           {6, "closed-loop convergence", closed_loop},
                           {7, "negative certification", negative_certification},
                           {8, "per-step runtime", runtime},
                           {9, "vehicle learning trends", vehicle_learning}};
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  fs::create_directories(out_root());

  std::vector<std::pair<const Criterion*, Verdict>> results;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    std::cout << "criterion " << c.id << " (" << c.name << ", " << fmt(since(t0)) << " s)\n";
    for (const auto& n : v.notes) std::cout << "  " << n << '\n';
    std::cout.flush();
    results.emplace_back(&c, std::move(v));
  }
  std::cout << "\nsummary\n";
  bool ok = true;
  for (const auto& [c, v] : results) {
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << c->id << ": " << c->name << '\n';
    ok = ok && v.pass;
  }
  return ok ? 0 : 1;
}
