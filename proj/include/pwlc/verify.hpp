#pragma once

#include <chrono>
#include <mutex>
#include <queue>

#include <Eigen/Eigenvalues>

#include "control.hpp"
#include "geometry.hpp"
#include "lyapunov.hpp"
#include "partition.hpp"
#include "qp.hpp"

namespace pwlc::verify {

using lyapunov::Triple;
using partition::Partition;
using partition::Polytope;

// Euler-discretized closed loop x+ = Acl x + ccl + d on each piece.
struct DiscretePWA {
  Partition part;
  std::vector<AffineModel> models;  // discrete: I + hA, hB, hC
  std::vector<Vec> dbar;  // already multiplied by h
  std::vector<control::AffineGains> gains;
  Box roi;
  double epsilon = 0.1;
  double h = 0.0;

  std::vector<Mat> Acl;
  std::vector<Vec> ccl;
  std::vector<Box> cell_boxes;

  int dim() const { return part.dim(); }
  std::size_t modes() const { return part.size(); }

  void close_loop() {
    Acl.clear();
    ccl.clear();
    cell_boxes.clear();
    for (std::size_t s = 0; s < modes(); ++s) {
      const auto& m = models[s];
      const auto& g = gains[s];
      Acl.push_back(m.A - m.B * g.K);
      ccl.push_back(m.C - m.B * g.k);
      cell_boxes.push_back(part.dim() <= 2 ? part.cells[s].bounding_box() : geometry::bounding_box(part.cells[s]));
    }
  }
};

inline DiscretePWA discretize(const Partition& part, const std::vector<AffineModel>& continuous,
                              const std::vector<Vec>& dbar, const std::vector<control::AffineGains>& gains, double h,
                              const Box& roi, double epsilon) {
  if (!(h > 0.0)) throw ConfigError("discretize: step must be positive");
  if (continuous.size() != part.size() || dbar.size() != part.size() || gains.size() != part.size())
    throw ConfigError("discretize: one model, bound and gain per piece required");
  if (!(epsilon > 0.0)) throw ConfigError("discretize: epsilon must be positive");
  DiscretePWA sys;
  sys.part = part;
  sys.h = h;
  sys.roi = roi;
  sys.epsilon = epsilon;
  sys.gains = gains;
  const auto n = part.dim();
  for (std::size_t s = 0; s < part.size(); ++s) {
    const auto& m = continuous[s];
    sys.models.push_back({Mat::Identity(n, n) + h * m.A, h * m.B, h * m.C});
    if ((dbar[s].array() < 0.0).any()) throw ConfigError("discretize: negative disturbance bound");
    sys.dbar.push_back(h * dbar[s]);
  }
  sys.close_loop();
  return sys;
}

// Feedback on a stitched partition. Shrunk cells keep their gains; on a
// triangle the pre-saturation input is interpolated linearly between the
// values the owning cells' laws take at the triangle's vertices, so the
// stitched controller is continuous.
inline std::vector<control::AffineGains> stitch_gains(const partition::StitchResult& st, const Partition& original,
                                                      const std::vector<control::AffineGains>& gains) {
  if (gains.size() != original.size()) throw ConfigError("stitch_gains: one gain per original cell required");
  std::vector<control::AffineGains> out;
  for (std::size_t t = 0; t < st.partition.size(); ++t) {
    if (t < st.original_count) {
      out.push_back(gains[st.sources[t].front()]);
      continue;
    }
    const auto verts = st.partition.cells[t].vertices();
    if (verts.size() != 3) throw ConsistencyError("stitch_gains: stitched piece is not a triangle");
    const auto m = gains.front().k.size();
    Eigen::Matrix3d M;
    Mat values(3, m);
    for (int v = 0; v < 3; ++v) {
      M.row(v) << verts[v][0], verts[v][1], 1.0;
      // The vertex is a corner of its owner's shrunk cell, hence inside that cell.
      const auto& g = gains[partition::locate(original, verts[v]).sigma];
      values.row(v) = (g.K * verts[v] + g.k).transpose();
    }
    const Mat coeffs = M.fullPivLu().solve(values);
    control::AffineGains g;
    g.K = coeffs.topRows(2).transpose();
    g.k = coeffs.row(2).transpose();
    out.push_back(std::move(g));
  }
  return out;
}

inline Vec closed_loop_step(const DiscretePWA& sys, const Vec& x, const Vec& d, int sigma) {
  return sys.Acl[sigma] * x + sys.ccl[sigma] + d;
}

inline Vec closed_loop_step(const DiscretePWA& sys, const Vec& x, const Vec& d) {
  if (!sys.roi.contains(x, sys.part.tol())) throw DomainError("closed_loop_step: state left the region of interest");
  return closed_loop_step(sys, x, d, partition::locate(sys.part, x).sigma);
}

// Modes whose cell contains x (within tolerance).
inline std::vector<int> modes_at(const DiscretePWA& sys, const Vec& x, double tol) {
  std::vector<int> out;
  for (const auto& c : sys.part.cells)
    if (c.contains(x, tol)) out.push_back(c.index);
  return out;
}

// True when x+ and x++ are reachable from x with admissible disturbances.
inline bool triple_consistent(const DiscretePWA& sys, const Triple& t, double tol = 1e-7) {
  auto step_ok = [&](const Vec& a, const Vec& b) {
    for (int s : modes_at(sys, a, tol * std::max(1.0, sys.part.domain.extent()))) {
      const Vec d = b - (sys.Acl[s] * a + sys.ccl[s]);
      if (((d.cwiseAbs() - sys.dbar[s]).array() <= tol * (1.0 + sys.dbar[s].array())).all()) return true;
    }
    return false;
  };
  return step_ok(t.x, t.x1) && step_ok(t.x1, t.x2);
}

inline double delta_v(const Mat& P, const Vec& x0, const Vec& x1, const Vec& x2) {
  return lyapunov::delta_v(P, {x0, x1, x2, {}, {}});
}

// ---------------------------------------------------------------------------
// Spatial branch and bound for max z'Hz + g'z + c over {G z <= h} x box.

struct QuadProgram {
  Mat H;
  Vec g;
  double c = 0.0;
  Mat G;
  Vec h;
  Vec lo;
  Vec hi;
};

struct BnbOptions {
  long node_cap = 200000;
  double gap = 1e-9;  // absolute optimality gap once a positive value is known
  double rel_gap = 0.0;  // additional gap relative to a positive incumbent
  bool stop_at_positive = false;
};

struct BnbResult {
  double upper = -std::numeric_limits<double>::infinity();  // max bound over closed nodes
  double lower = -std::numeric_limits<double>::infinity();  // best feasible value
  Vec argmax;
  long nodes = 0;
  bool exhausted = true;  // false when the node cap stopped the search
  bool undecided = false;  // some node closed with bound in [0, gap] and no positive incumbent
};

class BranchAndBound {
 public:
  explicit BranchAndBound(const QuadProgram& prob) : prob_(prob) {
    const auto k = prob.lo.size();
    center_ = 0.5 * (prob.lo + prob.hi);
    scale_ = (0.5 * (prob.hi - prob.lo)).cwiseMax(0.0);
    const Mat D = scale_.asDiagonal();
    Hs_ = symmetrized(D * prob.H * D);
    gs_ = D * (2.0 * prob.H * center_ + prob.g);
    cs_ = center_.dot(prob.H * center_) + prob.g.dot(center_) + prob.c;
    Gs_ = prob.G * D;
    hs_ = prob.h - prob.G * center_;
    Eigen::SelfAdjointEigenSolver<Mat> es(Hs_);
    Hneg_ = Mat::Zero(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double lam = es.eigenvalues()[i];
      const Vec v = es.eigenvectors().col(i);
      if (lam > 0.0) {
        pos_val_.push_back(lam);
        pos_vec_.push_back(v);
      } else {
        Hneg_ += lam * v * v.transpose();
      }
    }
    Hneg_ = symmetrized(Hneg_);
  }

  double objective_scaled(const Vec& s) const { return s.dot(Hs_ * s) + gs_.dot(s) + cs_; }
  Vec unscale(const Vec& s) const { return center_ + scale_.cwiseProduct(s); }

  // incumbent: shared best feasible value (for pruning across subproblems)
  BnbResult run(const BnbOptions& opt, const std::function<double()>& shared_lower = {},
                const std::function<void(double, const Vec&)>& report = {}) const {
    const auto k = center_.size();
    BnbResult res;
    struct Node {
      Vec lo, hi;
      double ub;
    };
    auto cmp = [](const Node& a, const Node& b) { return a.ub < b.ub; };
    std::priority_queue<Node, std::vector<Node>, decltype(cmp)> open(cmp);

    auto incumbent = [&] {
      double v = res.lower;
      if (shared_lower) v = std::max(v, shared_lower());
      return v;
    };
    auto close = [&](double ub) {
      res.upper = std::max(res.upper, ub);
      if (ub >= 0.0 && incumbent() <= 0.0) res.undecided = true;
    };

    Node root{Vec::Constant(k, -1.0), Vec::Constant(k, 1.0), 0.0};
    root.ub = bound(root.lo, root.hi, res, report);
    open.push(root);
    while (!open.empty()) {
      Node node = open.top();
      open.pop();
      const double inc = incumbent();
      if (node.ub < 0.0) {
        close(node.ub);
        continue;
      }
      if (inc > 0.0 && node.ub <= inc * (1.0 + opt.rel_gap) + opt.gap) {
        close(node.ub);
        continue;
      }
      if (opt.stop_at_positive && inc > 0.0) {
        close(node.ub);
        res.exhausted = false;
        while (!open.empty()) {
          close(open.top().ub);
          open.pop();
        }
        break;
      }
      if (res.nodes >= opt.node_cap) {
        res.exhausted = false;
        close(node.ub);
        while (!open.empty()) {
          close(open.top().ub);
          open.pop();
        }
        break;
      }
      const int axis = branch_axis(node.lo, node.hi);
      if (axis < 0 || node.hi[axis] - node.lo[axis] < 1e-12) {
        // Nothing left to split; the relaxation is exact up to rounding.
        close(node.ub);
        if (node.ub >= 0.0 && incumbent() <= 0.0) res.undecided = true;
        continue;
      }
      const double mid = 0.5 * (node.lo[axis] + node.hi[axis]);
      Node left{node.lo, node.hi, 0.0}, right{node.lo, node.hi, 0.0};
      left.hi[axis] = mid;
      right.lo[axis] = mid;
      for (Node* child : {&left, &right}) {
        if (!propagate(child->lo, child->hi)) {
          ++res.nodes;
          continue;
        }
        child->ub = std::min(node.ub, bound(child->lo, child->hi, res, report));
        if (child->ub == -std::numeric_limits<double>::infinity()) continue;
        open.push(std::move(*child));
      }
    }
    return res;
  }

  // Interval bound tightening of the node box against the linear constraints.
  // Returns false when the node is provably empty.
  bool propagate(Vec& lo, Vec& hi) const {
    const auto k = lo.size();
    for (int pass = 0; pass < 3; ++pass) {
      bool changed = false;
      for (Eigen::Index r = 0; r < Gs_.rows(); ++r) {
        double mn = 0.0;
        for (Eigen::Index i = 0; i < k; ++i) mn += std::min(Gs_(r, i) * lo[i], Gs_(r, i) * hi[i]);
        const double slack = hs_[r] - mn;
        const double tol = 1e-12 * (1.0 + std::abs(hs_[r]));
        if (slack < -tol) return false;
        for (Eigen::Index i = 0; i < k; ++i) {
          const double a = Gs_(r, i);
          if (std::abs(a) < 1e-12) continue;
          // a s_i <= slack + min(a s_i)
          if (a > 0) {
            const double cap = lo[i] + (slack + tol) / a;
            if (cap < hi[i] - 1e-9 * (hi[i] - lo[i])) {
              hi[i] = std::max(cap, lo[i]);
              changed = true;
            }
          } else {
            const double cap = hi[i] + (slack + tol) / a;
            if (cap > lo[i] + 1e-9 * (hi[i] - lo[i])) {
              lo[i] = std::min(cap, hi[i]);
              changed = true;
            }
          }
        }
      }
      if (!changed) break;
    }
    return true;
  }

  // Valid upper bound on the objective over the node; updates the incumbent.
  double bound(Vec lo, Vec hi, BnbResult& res, const std::function<void(double, const Vec&)>& report = {}) const {
    ++res.nodes;
    if (!propagate(lo, hi)) return -std::numeric_limits<double>::infinity();
    const auto k = lo.size();
    Vec glin = gs_;
    double cconst = cs_;
    for (std::size_t p = 0; p < pos_val_.size(); ++p) {
      const Vec& v = pos_vec_[p];
      double a = 0.0, b = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) {
        a += std::min(v[i] * lo[i], v[i] * hi[i]);
        b += std::max(v[i] * lo[i], v[i] * hi[i]);
      }
      // (v's)^2 <= (a + b) v's - a b on the node.
      glin += pos_val_[p] * (a + b) * v;
      cconst -= pos_val_[p] * a * b;
    }
    const auto rows = Gs_.rows();
    qp::Problem qpp;
    qpp.Q = -2.0 * Hneg_;
    qpp.c = -glin;
    qpp.G = Mat::Zero(rows + 2 * k, k);
    qpp.h = Vec::Zero(rows + 2 * k);
    qpp.G.topRows(rows) = Gs_;
    qpp.h.head(rows) = hs_;
    for (Eigen::Index i = 0; i < k; ++i) {
      qpp.G(rows + 2 * i, i) = 1.0;
      qpp.h[rows + 2 * i] = hi[i];
      qpp.G(rows + 2 * i + 1, i) = -1.0;
      qpp.h[rows + 2 * i + 1] = -lo[i];
    }
    qp::Options qo;
    qo.tol = 1e-10;
    qo.max_iter = 60;
    auto sol = qp::solve(qpp, qo);
    Vec s_hat = 0.5 * (lo + hi);
    Vec lam = Vec::Zero(rows);
    if (sol.z.allFinite() && sol.lambda.allFinite()) {
      s_hat = sol.z.cwiseMax(lo).cwiseMin(hi);
      lam = sol.lambda.head(rows);
    }
    const double ub = qp::concave_box_dual_bound(Hneg_, glin, cconst, Gs_, hs_, lo, hi, s_hat, lam);
    const double ub_box = qp::concave_box_dual_bound(Hneg_, glin, cconst, Gs_, hs_, lo, hi, s_hat, Vec::Zero(rows));
    const double tol = 1e-9 * (1.0 + hs_.cwiseAbs().maxCoeff());
    if (rows == 0 || ((Gs_ * s_hat - hs_).array() <= tol).all()) {
      const double val = objective_scaled(s_hat);
      if (val > res.lower) {
        res.lower = val;
        res.argmax = unscale(s_hat);
        if (report) report(val, res.argmax);
      }
    }
    return std::min(ub, ub_box);
  }

 private:
  int branch_axis(const Vec& lo, const Vec& hi) const {
    const auto k = lo.size();
    int best = -1;
    double score = 0.0;
    std::vector<double> spans(pos_val_.size());
    for (std::size_t p = 0; p < pos_val_.size(); ++p) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) s += std::abs(pos_vec_[p][i]) * (hi[i] - lo[i]);
      spans[p] = s;
    }
    for (Eigen::Index i = 0; i < k; ++i) {
      double sc = 0.0;
      for (std::size_t p = 0; p < pos_val_.size(); ++p) sc += pos_val_[p] * std::abs(pos_vec_[p][i]) * spans[p];
      sc *= hi[i] - lo[i];
      if (sc > score) {
        score = sc;
        best = static_cast<int>(i);
      }
    }
    if (best < 0) {
      // Concave objective: exact relaxation, but keep splitting the widest axis if asked.
      for (Eigen::Index i = 0; i < k; ++i)
        if (hi[i] - lo[i] > score) {
          score = hi[i] - lo[i];
          best = static_cast<int>(i);
        }
      if (pos_val_.empty()) return -1;
    }
    return best;
  }

  const QuadProgram& prob_;
  Vec center_, scale_;
  Mat Hs_, Hneg_, Gs_;
  Vec gs_, hs_;
  double cs_ = 0.0;
  std::vector<double> pos_val_;
  std::vector<Vec> pos_vec_;
};

// ---------------------------------------------------------------------------
// Subproblem assembly over z = (x0, d0, d1).

struct Subproblem {
  int sigma0 = 0;
  int sigma1 = 0;
  int slab = -1;  // -1: none; 2i: x_i >= eps; 2i+1: x_i <= -eps
  Box x0_box;
};

inline Box intersect(const Box& a, const Box& b, bool& empty) {
  Vec lo = a.lo.cwiseMax(b.lo), hi = a.hi.cwiseMin(b.hi);
  empty = (lo.array() > hi.array()).any();
  if (empty) return a;
  return Box(lo, hi);
}

// Interval image of A x + c + [d] over a box.
inline Box image_box(const Mat& A, const Vec& c, const Box& x, const Vec& dbar) {
  const Vec mid = x.center();
  const Vec rad = 0.5 * x.width();
  const Vec cm = A * mid + c;
  const Vec cr = A.cwiseAbs() * rad + dbar;
  return Box(cm - cr, cm + cr);
}

inline bool boxes_overlap(const Box& a, const Box& b, double tol) {
  return ((a.lo.array() <= b.hi.array() + tol) && (b.lo.array() <= a.hi.array() + tol)).all();
}

inline std::vector<Subproblem> enumerate_subproblems(const DiscretePWA& sys) {
  const int n = sys.dim();
  const double eps = sys.epsilon;
  const double tol = sys.part.tol();
  std::vector<Subproblem> out;
  for (std::size_t s0 = 0; s0 < sys.modes(); ++s0) {
    bool empty = false;
    Box base = intersect(sys.cell_boxes[s0], sys.roi, empty);
    if (empty) continue;
    std::vector<std::pair<int, Box>> pieces;
    const bool touches = ((base.lo.array() < eps) && (base.hi.array() > -eps)).all();
    if (!touches) {
      pieces.emplace_back(-1, base);
    } else {
      for (int i = 0; i < n; ++i) {
        for (int sgn = 0; sgn < 2; ++sgn) {
          Box b = base;
          if (sgn == 0) {
            if (b.hi[i] < eps) continue;
            b.lo[i] = std::max(b.lo[i], eps);
          } else {
            if (b.lo[i] > -eps) continue;
            b.hi[i] = std::min(b.hi[i], -eps);
          }
          pieces.emplace_back(2 * i + sgn, b);
        }
      }
    }
    for (const auto& [slab, box] : pieces) {
      const Box reach = image_box(sys.Acl[s0], sys.ccl[s0], box, sys.dbar[s0]);
      for (std::size_t s1 = 0; s1 < sys.modes(); ++s1) {
        if (!boxes_overlap(reach, sys.cell_boxes[s1], tol)) continue;
        out.push_back({static_cast<int>(s0), static_cast<int>(s1), slab, box});
      }
    }
  }
  return out;
}

// Objective and constraints of one (sigma0, sigma1, slab) subproblem.
inline QuadProgram assemble(const DiscretePWA& sys, const Mat& P, const Subproblem& sp) {
  const int n = sys.dim();
  const int k = 3 * n;
  const Mat& A0 = sys.Acl[sp.sigma0];
  const Mat& A1 = sys.Acl[sp.sigma1];
  const Vec& c0 = sys.ccl[sp.sigma0];
  const Vec& c1 = sys.ccl[sp.sigma1];
  // x0 = S0 z, x1 = M1 z + m1, x2 = M2 z + m2.
  Mat S0 = Mat::Zero(n, k);
  S0.leftCols(n).setIdentity();
  Mat M1 = Mat::Zero(n, k);
  M1.leftCols(n) = A0;
  M1.middleCols(n, n).setIdentity();
  const Vec m1 = c0;
  Mat M2 = A1 * M1;
  M2.rightCols(n) += Mat::Identity(n, n);
  const Vec m2 = A1 * m1 + c1;
  Mat L0(2 * n, k), L1(2 * n, k);
  L0 << S0, M1;
  L1 << M1, M2;
  Vec l0(2 * n), l1(2 * n);
  l0 << Vec::Zero(n), m1;
  l1 << m1, m2;
  QuadProgram q;
  q.H = symmetrized(L1.transpose() * P * L1 - L0.transpose() * P * L0);
  q.g = 2.0 * (L1.transpose() * P * l1 - L0.transpose() * P * l0);
  q.c = l1.dot(P * l1) - l0.dot(P * l0);

  const auto& cell0 = sys.part.cells[sp.sigma0];
  const auto& cell1 = sys.part.cells[sp.sigma1];
  const auto r0 = cell0.Z.rows(), r1 = cell1.Z.rows();
  q.G = Mat::Zero(r0 + r1, k);
  q.h = Vec::Zero(r0 + r1);
  q.G.topLeftCorner(r0, n) = cell0.Z;
  q.h.head(r0) = cell0.z;
  q.G.bottomRows(r1) = cell1.Z * M1;
  q.h.tail(r1) = cell1.z - cell1.Z * m1;

  q.lo = Vec(k);
  q.hi = Vec(k);
  q.lo << sp.x0_box.lo, -sys.dbar[sp.sigma0], -sys.dbar[sp.sigma1];
  q.hi << sp.x0_box.hi, sys.dbar[sp.sigma0], sys.dbar[sp.sigma1];
  return q;
}

enum class Status { Certified, Counterexample, GapLimit };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Certified: return "certified";
    case Status::Counterexample: return "counterexample";
    case Status::GapLimit: return "gap_limit";
  }
  return "?";
}

struct Outcome {
  Status status = Status::GapLimit;
  double upper = 0.0;  // certified upper bound on the maximum of DeltaV
  double lower = -std::numeric_limits<double>::infinity();  // best value found
  double gap = 0.0;
  std::optional<Triple> witness;
  int sigma0 = -1;
  int sigma1 = -1;
  long nodes = 0;
  std::size_t subproblems = 0;
  double seconds = 0.0;
};

struct VerifyOptions {
  long node_cap = 2000000;  // total over all subproblems
  double gap = 0.0;  // 0: 1e-6 * scale of P over the region of interest
  double rel_gap = 1e-3;  // optimality tolerance on a positive maximum, relative to its value
  bool exhaustive = true;  // false: stop at the first positive value
  unsigned threads = 0;
};

inline double default_gap(const Mat& P, const Box& roi) {
  Eigen::SelfAdjointEigenSolver<Mat> es(P);
  const double r2 = roi.lo.cwiseAbs().cwiseMax(roi.hi.cwiseAbs()).squaredNorm();
  return 1e-6 * std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-12) * std::max(r2, 1e-12);
}

inline Triple replay(const DiscretePWA& sys, const Vec& z, int s0, int s1) {
  const int n = sys.dim();
  Triple t;
  t.x = z.head(n);
  t.d0 = z.segment(n, n);
  t.d1 = z.tail(n);
  t.x1 = closed_loop_step(sys, t.x, t.d0, s0);
  t.x2 = closed_loop_step(sys, t.x1, t.d1, s1);
  return t;
}

// Global maximum of the two-step Lyapunov difference over the region of
// interest minus the epsilon box, all mode pairs and all admissible disturbances.
inline Outcome miqp_verify(const Mat& P, const DiscretePWA& sys, const VerifyOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = sys.dim();
  if (P.rows() != 2 * n || P.cols() != 2 * n) throw ConfigError("miqp_verify: candidate has the wrong size");
  Outcome out;
  out.gap = opt.gap > 0.0 ? opt.gap : default_gap(P, sys.roi);
  auto subs = enumerate_subproblems(sys);
  out.subproblems = subs.size();

  // Root bounds first: cheap, and lets the search visit the worst pairs early.
  std::mutex mu;
  double best = -std::numeric_limits<double>::infinity();
  Vec best_z;
  int best_s0 = -1, best_s1 = -1;
  std::atomic<long> nodes{0};
  std::atomic<bool> capped{false}, undecided{false};
  double upper = -std::numeric_limits<double>::infinity();
  std::vector<QuadProgram> probs(subs.size());
  std::vector<double> root_ub(subs.size());
  parallel_for(subs.size(), [&](std::size_t i) {
    probs[i] = assemble(sys, P, subs[i]);
    BranchAndBound bb(probs[i]);
    BnbResult r;
    root_ub[i] = bb.bound(Vec::Constant(3 * n, -1.0), Vec::Constant(3 * n, 1.0), r);
    std::lock_guard lock(mu);
    nodes += r.nodes;
    if (r.lower > best) {
      best = r.lower;
      best_z = r.argmax;
      best_s0 = subs[i].sigma0;
      best_s1 = subs[i].sigma1;
    }
  }, opt.threads);
  std::vector<std::size_t> order(subs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return root_ub[a] > root_ub[b]; });

  std::atomic<bool> stop{false};
  parallel_for(order.size(), [&](std::size_t idx) {
    const std::size_t i = order[idx];
    if (stop.load()) {
      std::lock_guard lock(mu);
      upper = std::max(upper, root_ub[i]);
      if (root_ub[i] >= 0.0) capped = true;
      return;
    }
    if (root_ub[i] < 0.0) {
      std::lock_guard lock(mu);
      upper = std::max(upper, root_ub[i]);
      return;
    }
    BranchAndBound bb(probs[i]);
    BnbOptions bo;
    bo.gap = out.gap;
    bo.rel_gap = opt.rel_gap;
    bo.stop_at_positive = !opt.exhaustive;
    bo.node_cap = std::max<long>(1, opt.node_cap - nodes.load());
    auto shared = [&] {
      std::lock_guard lock(mu);
      return best;
    };
    auto report = [&](double v, const Vec& z) {
      std::lock_guard lock(mu);
      if (v > best) {
        best = v;
        best_z = z;
        best_s0 = subs[i].sigma0;
        best_s1 = subs[i].sigma1;
      }
    };
    auto r = bb.run(bo, shared, report);
    nodes += r.nodes;
    std::lock_guard lock(mu);
    upper = std::max(upper, r.upper);
    if (!r.exhausted) capped = true;
    if (r.undecided) undecided = true;
    if (!opt.exhaustive && best > 0.0) stop = true;
    if (nodes.load() >= opt.node_cap) stop = true;
  }, opt.threads);

  out.nodes = nodes.load();
  out.upper = upper;
  out.lower = best;
  if (best > 0.0) {
    out.status = Status::Counterexample;
  } else if (upper < 0.0) {
    out.status = Status::Certified;
  } else {
    out.status = Status::GapLimit;
  }
  if (best_s0 >= 0 && best_z.size()) {
    out.sigma0 = best_s0;
    out.sigma1 = best_s1;
    out.witness = replay(sys, best_z, best_s0, best_s1);
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

struct GridMax {
  double value = -std::numeric_limits<double>::infinity();
  std::optional<Triple> argmax;
  std::size_t points = 0;
};

// Exhaustive grid over x0 in the region of interest outside the epsilon box,
// with every disturbance-box vertex at both steps.
inline GridMax brute_force_max_dv(const Mat& P, const DiscretePWA& sys, int per_axis) {
  const int n = sys.dim();
  GridMax out;
  std::vector<int> idx(n, 0);
  const double tol = sys.part.tol();
  const int corners = 1 << n;
  for (;;) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = sys.roi.lo[i] + sys.roi.width()[i] * idx[i] / std::max(1, per_axis - 1);
    if (x.cwiseAbs().maxCoeff() >= sys.epsilon) {
      for (int s0 : modes_at(sys, x, tol)) {
        for (int a = 0; a < corners; ++a) {
          Vec d0(n);
          for (int i = 0; i < n; ++i) d0[i] = ((a >> i) & 1 ? 1.0 : -1.0) * sys.dbar[s0][i];
          const Vec x1 = closed_loop_step(sys, x, d0, s0);
          if (!sys.part.domain.contains(x1, tol)) continue;
          for (int s1 : modes_at(sys, x1, tol)) {
            for (int b = 0; b < corners; ++b) {
              Vec d1(n);
              for (int i = 0; i < n; ++i) d1[i] = ((b >> i) & 1 ? 1.0 : -1.0) * sys.dbar[s1][i];
              const Vec x2 = closed_loop_step(sys, x1, d1, s1);
              const double v = delta_v(P, x, x1, x2);
              ++out.points;
              if (v > out.value) {
                out.value = v;
                out.argmax = Triple{x, x1, x2, d0, d1};
              }
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

// ---------------------------------------------------------------------------
// Counterexample-guided loop.

enum class CegStatus { Certified, NoCertificate, GapLimit, IterationCap };

inline const char* to_string(CegStatus s) {
  switch (s) {
    case CegStatus::Certified: return "certified";
    case CegStatus::NoCertificate: return "no_certificate";
    case CegStatus::GapLimit: return "gap_limit";
    case CegStatus::IterationCap: return "iteration_cap";
  }
  return "?";
}

struct CegTraceEntry {
  int iteration = 0;
  Status status = Status::GapLimit;
  double upper = 0.0;
  double lower = 0.0;
  double margin = 0.0;
  double log_det_hessian = 0.0;
  long nodes = 0;
  double seconds = 0.0;
};

struct CegResult {
  CegStatus status = CegStatus::IterationCap;
  Mat P;
  Outcome last;
  std::vector<Triple> samples;
  std::vector<CegTraceEntry> trace;
};

struct CegOptions {
  int max_iterations = 300;
  lyapunov::Options learner;
  VerifyOptions verify;
  std::function<void(const CegTraceEntry&)> progress;
};

inline CegResult ceg_loop(const DiscretePWA& sys, const CegOptions& opt = {},
                          const std::vector<Triple>& warm_start = {}) {
  const int n = sys.dim();
  lyapunov::Learner learner(n, opt.learner);
  auto consistent = [&](const Triple& t) { return triple_consistent(sys, t); };
  for (const auto& t : warm_start) learner.add(t, consistent);
  CegResult res;
  const double cap_from_complexity = 1e3 * std::pow(2.0 * n, 3) / sqr(opt.learner.eps_acc);
  const int cap = static_cast<int>(std::min<double>(opt.max_iterations, cap_from_complexity));
  for (int it = 1; it <= cap; ++it) {
    auto proposal = learner.propose();
    if (std::holds_alternative<lyapunov::Infeasible>(proposal)) {
      res.status = CegStatus::NoCertificate;
      break;
    }
    const auto& cand = std::get<lyapunov::Candidate>(proposal);
    res.P = cand.P;
    auto outcome = miqp_verify(cand.P, sys, opt.verify);
    CegTraceEntry entry{it, outcome.status, outcome.upper, outcome.lower, cand.margin, cand.log_det_hessian,
                        outcome.nodes, outcome.seconds};
    res.trace.push_back(entry);
    if (opt.progress) opt.progress(entry);
    res.last = outcome;
    if (outcome.status == Status::Certified) {
      res.status = CegStatus::Certified;
      break;
    }
    if (outcome.status == Status::GapLimit) {
      res.status = CegStatus::GapLimit;
      break;
    }
    if (!outcome.witness || !learner.add(*outcome.witness, consistent)) {
      // A repeated witness means the learner cannot make progress.
      res.status = CegStatus::GapLimit;
      break;
    }
  }
  res.samples = learner.samples();
  return res;
}

// ---------------------------------------------------------------------------
// Region of attraction.

// V(x) = [x; F(x)]' P [x; F(x)] on mode sigma with d = 0.
inline double roa_value(const Mat& P, const DiscretePWA& sys, const Vec& x, int sigma) {
  const Vec x1 = closed_loop_step(sys, x, Vec::Zero(sys.dim()), sigma);
  const Vec z = lyapunov::stack(x, x1);
  return z.dot(P * z);
}

inline double roa_value(const Mat& P, const DiscretePWA& sys, const Vec& x) {
  return roa_value(P, sys, x, partition::locate(sys.part, x).sigma);
}

// Exact minimum of V over the boundary of the region of interest, taken over
// every (facet, cell) segment by minimizing a scalar quadratic.
inline double roa_boundary_min(const Mat& P, const DiscretePWA& sys) {
  const int n = sys.dim();
  double best = std::numeric_limits<double>::infinity();
  const double tol = sys.part.tol();
  if (n == 1) {
    for (double x : {sys.roi.lo[0], sys.roi.hi[0]})
      for (int s : modes_at(sys, Vec::Constant(1, x), tol)) best = std::min(best, roa_value(P, sys, Vec::Constant(1, x), s));
    return best;
  }
  if (n != 2) throw UnsupportedError("roa_boundary_min: implemented for n <= 2");
  const auto& D = sys.roi;
  std::vector<Vec> corners;
  for (auto [a, b] : {std::pair{0, 0}, {1, 0}, {1, 1}, {0, 1}}) {
    Vec c(2);
    c << (a ? D.hi[0] : D.lo[0]), (b ? D.hi[1] : D.lo[1]);
    corners.push_back(c);
  }
  for (int e = 0; e < 4; ++e) {
    const Vec a = corners[e], b = corners[(e + 1) % 4];
    const Vec dir = b - a;
    for (std::size_t s = 0; s < sys.modes(); ++s) {
      const auto& cell = sys.part.cells[s];
      double t0 = 0.0, t1 = 1.0;
      bool empty = false;
      for (Eigen::Index r = 0; r < cell.Z.rows() && !empty; ++r) {
        const double num = cell.z[r] - cell.Z.row(r).dot(a);
        const double den = cell.Z.row(r).dot(dir);
        if (std::abs(den) < 1e-14) {
          if (num < -tol) empty = true;
        } else if (den > 0) {
          t1 = std::min(t1, num / den);
        } else {
          t0 = std::max(t0, num / den);
        }
      }
      if (empty || t0 > t1 + 1e-12) continue;
      // V(a + t dir) = alpha t^2 + beta t + gamma.
      Mat L(4, 2);
      L << Mat::Identity(2, 2), sys.Acl[s];
      Vec l(4);
      l << Vec::Zero(2), sys.ccl[s];
      const Vec za = L * a + l, zd = L * dir;
      const double alpha = zd.dot(P * zd), beta = 2.0 * za.dot(P * zd), gamma = za.dot(P * za);
      auto V = [&](double t) { return alpha * t * t + beta * t + gamma; };
      double m = std::min(V(t0), V(t1));
      if (alpha > 0) {
        const double ts = -beta / (2.0 * alpha);
        if (ts > t0 && ts < t1) m = std::min(m, V(ts));
      }
      best = std::min(best, m);
    }
  }
  return best;
}

struct Roa {
  double level = 0.0;
  std::vector<std::vector<Eigen::Vector2d>> contours;
  double area = 0.0;
};

// Sublevel set {V <= c} traced by marching squares; the area is that of the
// piecewise-linear region in the connected component containing the origin.
template <class Fn>
Roa trace_sublevel(const Fn& value, const Box& box, double level, int per_axis) {
  Roa roa;
  roa.level = level;
  const int N = per_axis;
  const double hx = box.width()[0] / (N - 1), hy = box.width()[1] / (N - 1);
  Mat vals(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      Vec x(2);
      x << box.lo[0] + i * hx, box.lo[1] + j * hy;
      vals(i, j) = value(x) - level;
    }
  auto pt = [&](int i, int j) { return Eigen::Vector2d(box.lo[0] + i * hx, box.lo[1] + j * hy); };

  // Flood fill squares from the one containing the origin through squares with an inside corner.
  std::vector<char> seen(static_cast<std::size_t>(N - 1) * (N - 1), 0);
  std::vector<std::pair<int, int>> stack;
  const int oi = std::clamp(static_cast<int>((0.0 - box.lo[0]) / hx), 0, N - 2);
  const int oj = std::clamp(static_cast<int>((0.0 - box.lo[1]) / hy), 0, N - 2);
  stack.emplace_back(oi, oj);
  seen[oi * (N - 1) + oj] = 1;
  std::map<std::pair<long, long>, std::vector<std::pair<long, long>>> graph;
  auto edge_key = [&](int i0, int j0, int i1, int j1) {
    long a = static_cast<long>(i0) * N + j0, b = static_cast<long>(i1) * N + j1;
    return std::pair{std::min(a, b), std::max(a, b)};
  };
  auto crossing = [&](int i0, int j0, int i1, int j1) {
    const double v0 = vals(i0, j0), v1 = vals(i1, j1);
    const double t = v0 / (v0 - v1);
    return Eigen::Vector2d(pt(i0, j0) + t * (pt(i1, j1) - pt(i0, j0)));
  };
  std::map<std::pair<long, long>, Eigen::Vector2d> edge_point;
  while (!stack.empty()) {
    auto [i, j] = stack.back();
    stack.pop_back();
    const int ci[4] = {i, i + 1, i + 1, i}, cj[4] = {j, j, j + 1, j + 1};
    std::vector<Eigen::Vector2d> poly;
    std::vector<std::pair<long, long>> crossings;
    bool any_inside = false;
    for (int c = 0; c < 4; ++c) {
      const int a = c, b = (c + 1) % 4;
      const bool ina = vals(ci[a], cj[a]) <= 0.0, inb = vals(ci[b], cj[b]) <= 0.0;
      if (ina) {
        poly.push_back(pt(ci[a], cj[a]));
        any_inside = true;
      }
      if (ina != inb) {
        auto key = edge_key(ci[a], cj[a], ci[b], cj[b]);
        auto p = crossing(ci[a], cj[a], ci[b], cj[b]);
        edge_point[key] = p;
        poly.push_back(p);
        crossings.push_back(key);
      }
    }
    if (!any_inside) continue;
    roa.area += std::abs(geometry::polygon_area(poly));
    // Pair crossings in walk order; saddles pair consecutively.
    for (std::size_t c = 0; c + 1 < crossings.size(); c += 2) {
      graph[crossings[c]].push_back(crossings[c + 1]);
      graph[crossings[c + 1]].push_back(crossings[c]);
    }
    const int ni[4] = {i - 1, i + 1, i, i}, nj[4] = {j, j, j - 1, j + 1};
    // Neighbor across each side if the shared side has an inside endpoint.
    const int side[4][4] = {{i, j, i, j + 1}, {i + 1, j, i + 1, j + 1}, {i, j, i + 1, j}, {i, j + 1, i + 1, j + 1}};
    for (int k = 0; k < 4; ++k) {
      if (ni[k] < 0 || nj[k] < 0 || ni[k] >= N - 1 || nj[k] >= N - 1) continue;
      if (seen[ni[k] * (N - 1) + nj[k]]) continue;
      if (vals(side[k][0], side[k][1]) > 0.0 && vals(side[k][2], side[k][3]) > 0.0) continue;
      seen[ni[k] * (N - 1) + nj[k]] = 1;
      stack.emplace_back(ni[k], nj[k]);
    }
  }
  // Chain segments into polylines.
  std::set<std::pair<long, long>> used;
  for (const auto& [start, _] : graph) {
    if (used.count(start)) continue;
    std::vector<Eigen::Vector2d> line;
    auto cur = start;
    std::pair<long, long> prev{-1, -1};
    for (;;) {
      used.insert(cur);
      line.push_back(edge_point[cur]);
      std::pair<long, long> next{-1, -1};
      for (const auto& nb : graph[cur])
        if (nb != prev && !used.count(nb)) {
          next = nb;
          break;
        }
      if (next.first < 0) {
        for (const auto& nb : graph[cur])
          if (nb == start && line.size() > 2) line.push_back(edge_point[start]);
        break;
      }
      prev = cur;
      cur = next;
    }
    roa.contours.push_back(std::move(line));
  }
  return roa;
}

inline Roa roa_level(const Mat& P, const DiscretePWA& sys, int per_axis = 401) {
  if (sys.dim() != 2) throw UnsupportedError("roa_level: level-set tracing is implemented for 2-D systems");
  const double c = roa_boundary_min(P, sys);
  if (!(c > 0.0)) throw ValidationError("roa_level: V is not positive on the boundary");
  return trace_sublevel([&](const Vec& x) { return roa_value(P, sys, x); }, sys.roi, c * (1.0 - 1e-9), per_axis);
}

// ---------------------------------------------------------------------------
// Closed-loop simulation of the verification model.

// Disturbance vertex that maximizes V at the next state (greedy adversary).
inline Vec adversarial_disturbance(const Mat& P, const DiscretePWA& sys, const Vec& x, int sigma) {
  const int n = sys.dim();
  const Vec nominal = closed_loop_step(sys, x, Vec::Zero(n), sigma);
  const int s1 = partition::locate(sys.part, nominal).sigma;
  Mat L(2 * n, n);
  L << Mat::Identity(n, n), sys.Acl[s1];
  Vec l(2 * n);
  l << Vec::Zero(n), sys.ccl[s1];
  const Vec grad = 2.0 * L.transpose() * P * (L * nominal + l);
  Vec d(n);
  for (int i = 0; i < n; ++i) d[i] = (grad[i] >= 0.0 ? 1.0 : -1.0) * sys.dbar[sigma][i];
  return d;
}

struct EulerRun {
  std::vector<Vec> states;
  bool left_roi = false;
  int reached_step = -1;  // first step with |x|_inf <= eps
  double tail_max = 0.0;  // max |x|_inf after reaching
};

inline EulerRun simulate_euler(const Mat& P, const DiscretePWA& sys, const Vec& x0, int steps, bool adversarial = true) {
  EulerRun run;
  Vec x = x0;
  run.states.push_back(x);
  for (int k = 0; k < steps; ++k) {
    if (!sys.roi.contains(x, sys.part.tol())) {
      run.left_roi = true;
      break;
    }
    if (run.reached_step < 0 && x.cwiseAbs().maxCoeff() <= sys.epsilon) run.reached_step = k;
    if (run.reached_step >= 0) run.tail_max = std::max(run.tail_max, x.cwiseAbs().maxCoeff());
    const int s = partition::locate(sys.part, x).sigma;
    const Vec d = adversarial ? adversarial_disturbance(P, sys, x, s) : Vec::Zero(sys.dim());
    x = closed_loop_step(sys, x, d, s);
    run.states.push_back(x);
  }
  return run;
}

// ---------------------------------------------------------------------------
// LQR baseline: quadratic Lyapunov function of the LQR loop on the PWA model.

struct LqrBaseline {
  Mat K;
  Mat P;
  double level = 0.0;
  double area = 0.0;
};

// The level is the largest c such that {x'Px <= c} lies in the region of
// interest and the LQR-controlled PWA model (with worst disturbance vertices)
// decreases x'Px at every grid point outside the epsilon box inside the set.
// Exact minimum of x'Px over the boundary of a 2-D box.
inline double box_boundary_min(const Mat& P, const Box& box) {
  if (box.dim() != 2) throw UnsupportedError("box_boundary_min: implemented for 2-D boxes");
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 2; ++i) {
    const int j = 1 - i;
    for (double face : {box.lo[i], box.hi[i]}) {
      // x_i = face, x_j = t: P_jj t^2 + 2 P_ij face t + P_ii face^2.
      auto V = [&](double t) { return P(j, j) * t * t + 2.0 * P(i, j) * face * t + P(i, i) * face * face; };
      double m = std::min(V(box.lo[j]), V(box.hi[j]));
      if (P(j, j) > 0.0) {
        const double ts = -P(i, j) * face / P(j, j);
        if (ts > box.lo[j] && ts < box.hi[j]) m = std::min(m, V(ts));
      }
      best = std::min(best, m);
    }
  }
  return best;
}

inline LqrBaseline lqr_baseline(const AffineModel& origin_model, const control::CostSpec& cost, const DiscretePWA& sys,
                                int per_axis = 201) {
  const int n = sys.dim();
  if (n != 2) throw UnsupportedError("lqr_baseline: implemented for 2-D systems");
  LqrBaseline out;
  out.P = control::care(origin_model.A, origin_model.B, cost.Q, cost.r);
  out.K = cost.r.cwiseInverse().asDiagonal() * origin_model.B.transpose() * out.P;
  double level = box_boundary_min(out.P, sys.roi);
  const int corners = 1 << n;
  std::vector<int> idx(n, 0);
  for (;;) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = sys.roi.lo[i] + sys.roi.width()[i] * idx[i] / (per_axis - 1);
    if (x.cwiseAbs().maxCoeff() >= sys.epsilon) {
      const int s = partition::locate(sys.part, x).sigma;
      const auto& m = sys.models[s];
      const Vec nominal = m.A * x - m.B * (out.K * x) + m.C;
      double worst = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < corners; ++a) {
        Vec d(n);
        for (int i = 0; i < n; ++i) d[i] = ((a >> i) & 1 ? 1.0 : -1.0) * sys.dbar[s][i];
        const Vec x1 = nominal + d;
        worst = std::max(worst, x1.dot(out.P * x1) - x.dot(out.P * x));
      }
      if (worst >= 0.0) level = std::min(level, x.dot(out.P * x));
    }
    int ax = n - 1;
    while (ax >= 0 && ++idx[ax] >= per_axis) idx[ax--] = 0;
    if (ax < 0) break;
  }
  out.level = level;
  if (n == 2) out.area = std::numbers::pi * level / std::sqrt(out.P.determinant());
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json triple_to_json(const Triple& t) {
  using identify::vec_to_json;
  return {{"x0", vec_to_json(t.x)}, {"x1", vec_to_json(t.x1)}, {"x2", vec_to_json(t.x2)},
          {"d0", vec_to_json(t.d0)}, {"d1", vec_to_json(t.d1)}};
}

inline nlohmann::json to_json(const Outcome& o) {
  nlohmann::json j{{"status", to_string(o.status)}, {"upper_bound", o.upper}, {"best_value", o.lower},
                   {"gap", o.gap}, {"nodes", o.nodes}, {"subproblems", o.subproblems}, {"seconds", o.seconds}};
  if (o.witness) {
    j["witness"] = triple_to_json(*o.witness);
    j["modes"] = {o.sigma0, o.sigma1};
  }
  return j;
}

}  // namespace pwlc::verify
