#pragma once

#include <optional>
#include <ostream>

#include "dynamics.hpp"
#include "geometry.hpp"
#include "identify.hpp"

namespace pwlc::uncertainty {

using geometry::Ball;
using identify::BasisSet;
using identify::PieceModel;
using identify::SampleRecord;
using partition::Partition;
using partition::Polytope;

struct PieceBound {
  bool bounded = false;  // false for pieces without samples
  std::size_t samples = 0;
  Vec d_e;
  Ball state_gap;
  Ball control_gap;
  Vec lip_x_hat;
  Vec lip_u_hat;
  bool heuristic_lipschitz = false;
  Vec d_bar;
};

struct Report {
  Vec lip_x;
  Vec lip_u;
  double rho_e = 0.0;
  std::vector<PieceBound> pieces;

  bool all_bounded() const {
    return std::all_of(pieces.begin(), pieces.end(), [](const PieceBound& p) { return p.bounded; });
  }
  std::vector<Vec> bounds() const {
    std::vector<Vec> out;
    for (const auto& p : pieces) {
      if (!p.bounded) throw ValidationError("uncertainty report contains an unbounded piece");
      out.push_back(p.d_bar);
    }
    return out;
  }
};

struct Options {
  double rho_e = 1e-3;
  int grid_per_axis = 41;  // resolution of the certified grid bound (n > 2 or m > 2)
  unsigned threads = 0;
};

// max_s |F^ - F~| + rho_e |F~| per component, or nullopt for an empty piece.
template <class Records>
std::optional<Vec> sample_error_bound(const Records& records, const PieceModel& model, double rho_e) {
  if (records.empty()) return std::nullopt;
  Vec out = Vec::Zero(model.n());
  for (const SampleRecord& s : records) {
    const Vec pred = model.weights * s.theta;
    out = out.cwiseMax((pred - s.deriv).cwiseAbs() + rho_e * s.deriv.cwiseAbs());
  }
  return out;
}

inline Ball largest_empty_ball_state(const std::vector<Vec>& samples, const Polytope& cell, int grid_per_axis = 41) {
  if (samples.empty()) return geometry::chebyshev_ball(cell);
  const int n = cell.dim();
  if (n == 1) {
    auto v = cell.vertices();
    std::vector<double> s;
    for (const auto& x : samples) s.push_back(x[0]);
    std::sort(s.begin(), s.end());
    const double lo = v.front()[0], hi = v.back()[0];
    Ball b;
    b.center = Vec::Constant(1, lo);
    b.radius = std::max(0.0, s.front() - lo);
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
      const double r = 0.5 * (s[k + 1] - s[k]);
      if (r > b.radius) {
        b.radius = r;
        b.center[0] = 0.5 * (s[k] + s[k + 1]);
      }
    }
    if (hi - s.back() > b.radius) {
      b.radius = hi - s.back();
      b.center[0] = hi;
    }
    return b;
  }
  if (n == 2) {
    std::vector<Eigen::Vector2d> sites;
    for (const auto& x : samples) sites.emplace_back(x[0], x[1]);
    return geometry::largest_empty_circle(sites, geometry::polygon_of(cell));
  }
  return geometry::empty_ball_grid_bound(samples, geometry::bounding_box(cell), grid_per_axis);
}

// Sorted-gap scan for m = 1; the planar algorithm for m = 2; grid bound above.
inline Ball largest_empty_ball_control(const std::vector<Vec>& samples, const Box& omega, int grid_per_axis = 41) {
  const int m = omega.dim();
  if (samples.empty()) {
    Ball b;
    b.center = omega.center();
    b.radius = 0.5 * omega.width().minCoeff();
    return b;
  }
  if (m <= 2) return largest_empty_ball_state(samples, Polytope::from_box(omega), grid_per_axis);
  return geometry::empty_ball_grid_bound(samples, omega, grid_per_axis);
}

struct ModelLipschitz {
  Vec x;
  Vec u;
  bool heuristic = false;
};

// Affine pieces: row norms of A and B. Other bases: largest gradient norm on a
// grid over the cell and the input box vertices, inflated by 10%.
inline ModelLipschitz model_lipschitz(const PieceModel& piece, const BasisSet& basis, int m,
                                      const Box& cell_box = {}, const Vec& u_bar = {}) {
  const int n = piece.n();
  ModelLipschitz out;
  if (basis.kind == identify::BasisKind::Affine) {
    auto am = identify::to_affine(piece, basis, m);
    out.x = am.A.rowwise().norm();
    out.u = am.B.rowwise().norm();
    return out;
  }
  if (cell_box.dim() != n || u_bar.size() != m) throw ConfigError("model_lipschitz: general basis needs the cell box and input bounds");
  out.heuristic = true;
  out.x = Vec::Zero(n);
  out.u = Vec::Zero(n);
  const int per_axis = 9;
  std::vector<int> idx(n, 0);
  for (;;) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = cell_box.lo[i] + cell_box.width()[i] * idx[i] / (per_axis - 1);
    const Vec phi = basis.eval(x);
    const Mat J = basis.jacobian(x);
    for (int corner = 0; corner < (1 << m); ++corner) {
      Mat Wx = piece.drift_weights(basis.p);
      for (int j = 0; j < m; ++j) Wx += ((corner >> j) & 1 ? u_bar[j] : -u_bar[j]) * piece.input_weights(basis.p, j);
      const Mat gx = Wx * J;
      Mat gu(n, m);
      for (int j = 0; j < m; ++j) gu.col(j) = piece.input_weights(basis.p, j) * phi;
      out.x = out.x.cwiseMax(gx.rowwise().norm());
      out.u = out.u.cwiseMax(gu.rowwise().norm());
    }
    int ax = n - 1;
    while (ax >= 0 && ++idx[ax] >= per_axis) idx[ax--] = 0;
    if (ax < 0) break;
  }
  out.x *= 1.1;
  out.u *= 1.1;
  return out;
}

inline Vec total_bound(const PieceBound& p, const Vec& lip_x, const Vec& lip_u) {
  if (!p.bounded) throw ValidationError("total_bound: piece is unbounded");
  return (lip_u + p.lip_u_hat) * p.control_gap.radius + (lip_x + p.lip_x_hat) * p.state_gap.radius + p.d_e;
}

// Bounds every piece from its sample records.
template <class DB>
Report compute_report(const dynamics::PlantSpec& plant, const Partition& part, const std::vector<PieceModel>& models,
                      const BasisSet& basis, const DB& db, const Options& opt = {}) {
  if (models.size() != part.size()) throw ConfigError("compute_report: one model per piece required");
  if (opt.rho_e < plant.meas_tol) warn("rho_e is below the plant's measurement tolerance; bounds may be unsound");
  Report rep;
  rep.lip_x = plant.lipschitz_x;
  rep.lip_u = plant.lipschitz_u;
  rep.rho_e = opt.rho_e;
  rep.pieces.resize(part.size());
  const Box omega = plant.input_box();
  parallel_for(part.size(), [&](std::size_t s) {
    const auto& recs = db.records(s);
    PieceBound pb;
    pb.samples = recs.size();
    auto de = sample_error_bound(recs, models[s], opt.rho_e);
    std::vector<Vec> xs, us;
    for (const auto& r : recs) {
      xs.push_back(r.x);
      us.push_back(r.u);
    }
    pb.state_gap = largest_empty_ball_state(xs, part.cells[s], opt.grid_per_axis);
    pb.control_gap = largest_empty_ball_control(us, omega, opt.grid_per_axis);
    Box cell_box = part.dim() <= 2 ? part.cells[s].bounding_box() : geometry::bounding_box(part.cells[s]);
    auto lip = model_lipschitz(models[s], basis, plant.m, cell_box, plant.u_bar);
    pb.lip_x_hat = lip.x;
    pb.lip_u_hat = lip.u;
    pb.heuristic_lipschitz = lip.heuristic;
    if (de) {
      pb.bounded = true;
      pb.d_e = *de;
      pb.d_bar = total_bound(pb, rep.lip_x, rep.lip_u);
    }
    rep.pieces[s] = std::move(pb);
  }, opt.threads);
  return rep;
}

struct Violations {
  std::size_t probes = 0;
  std::size_t count = 0;
  double worst_ratio = 0.0;  // max over probes and components of |F - F^| / d_bar
};

// Compares the true field against the models on a state grid times an input
// grid; any |F_i - F^_i| > d_bar_i is a violation.
inline Violations validate_bound(const dynamics::PlantSpec& plant, const Partition& part,
                                 const std::vector<AffineModel>& models, const std::vector<Vec>& bounds,
                                 int state_per_axis, int input_per_axis) {
  if (models.size() != part.size() || bounds.size() != part.size()) throw ConfigError("validate_bound: size mismatch");
  const int n = plant.n, m = plant.m;
  Violations v;
  std::vector<int> ix(n, 0);
  const Box& D = part.domain;
  const Box omega = plant.input_box();
  for (;;) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = D.lo[i] + D.width()[i] * ix[i] / std::max(1, state_per_axis - 1);
    const int s = partition::locate(part, x).sigma;
    std::vector<int> iu(m, 0);
    for (;;) {
      Vec u(m);
      for (int j = 0; j < m; ++j) u[j] = input_per_axis == 1 ? 0.0 : omega.lo[j] + omega.width()[j] * iu[j] / (input_per_axis - 1);
      const Vec err = (dynamics::eval_unchecked(plant, x, u) - models[s](x, u)).cwiseAbs();
      ++v.probes;
      bool bad = false;
      for (int i = 0; i < n; ++i) {
        if (err[i] > bounds[s][i]) bad = true;
        const double ratio = bounds[s][i] > 0 ? err[i] / bounds[s][i] : (err[i] > 0 ? std::numeric_limits<double>::infinity() : 0.0);
        v.worst_ratio = std::max(v.worst_ratio, ratio);
      }
      if (bad) ++v.count;
      int ax = m - 1;
      while (ax >= 0 && ++iu[ax] >= input_per_axis) iu[ax--] = 0;
      if (ax < 0) break;
    }
    int ax = n - 1;
    while (ax >= 0 && ++ix[ax] >= state_per_axis) ix[ax--] = 0;
    if (ax < 0) break;
  }
  return v;
}

// Bounds for a stitched partition. Shrunk cells keep their cell bound. A
// triangle lies inside the union of its source cells, so on each source the
// true field is within that cell's bound of the cell model, and the triangle
// model differs from the cell model by an affine amount maximized at the
// triangle's vertices.
inline std::vector<Vec> transfer_bounds(const partition::StitchResult& st, const std::vector<AffineModel>& cell_models,
                                        const std::vector<Vec>& cell_bounds, const Vec& u_bar) {
  std::vector<Vec> out;
  for (std::size_t t = 0; t < st.partition.size(); ++t) {
    if (t < st.original_count) {
      out.push_back(cell_bounds.at(st.sources[t].front()));
      continue;
    }
    const auto& mt = st.models[t];
    const auto verts = st.partition.cells[t].vertices();
    Vec best = Vec::Zero(mt.C.size());
    for (int c : st.sources[t]) {
      const auto& mc = cell_models.at(c);
      Vec gap = (mc.B - mt.B).cwiseAbs() * u_bar;
      Vec drift = Vec::Zero(mt.C.size());
      for (const auto& v : verts) drift = drift.cwiseMax(((mc.A - mt.A) * v + mc.C - mt.C).cwiseAbs());
      best = best.cwiseMax(cell_bounds.at(c) + drift + gap);
    }
    out.push_back(best);
  }
  return out;
}

inline nlohmann::json to_json(const Report& rep) {
  using identify::vec_to_json;
  nlohmann::json pieces = nlohmann::json::array();
  for (const auto& p : rep.pieces) {
    nlohmann::json j{{"bounded", p.bounded},
                     {"samples", p.samples},
                     {"state_gap", {{"center", vec_to_json(p.state_gap.center)}, {"radius", p.state_gap.radius}}},
                     {"control_gap", {{"center", vec_to_json(p.control_gap.center)}, {"radius", p.control_gap.radius}}},
                     {"lip_x_hat", vec_to_json(p.lip_x_hat)},
                     {"lip_u_hat", vec_to_json(p.lip_u_hat)},
                     {"heuristic_lipschitz", p.heuristic_lipschitz}};
    if (p.bounded) {
      j["d_e"] = vec_to_json(p.d_e);
      j["d_bar"] = vec_to_json(p.d_bar);
    }
    pieces.push_back(std::move(j));
  }
  return {{"lip_x", vec_to_json(rep.lip_x)}, {"lip_u", vec_to_json(rep.lip_u)}, {"rho_e", rep.rho_e}, {"pieces", pieces}};
}

// Heatmap rows: piece, cell center, |d_bar|, radii.
inline void write_heatmap_csv(std::ostream& os, const Report& rep, const Partition& part) {
  os.precision(12);
  os << "piece";
  for (int i = 0; i < part.dim(); ++i) os << ",c" << i + 1;
  os << ",dbar_norm,r_x,r_u,samples\n";
  for (std::size_t s = 0; s < rep.pieces.size(); ++s) {
    const auto& p = rep.pieces[s];
    Vec c = part.dim() <= 2 ? part.cells[s].bounding_box().center() : geometry::bounding_box(part.cells[s]).center();
    os << s;
    for (int i = 0; i < part.dim(); ++i) os << ',' << c[i];
    os << ',' << (p.bounded ? p.d_bar.norm() : std::numeric_limits<double>::infinity()) << ',' << p.state_gap.radius
       << ',' << p.control_gap.radius << ',' << p.samples << '\n';
  }
}

}  // namespace pwlc::uncertainty
