#pragma once

#include "core.hpp"

// Dense primal-dual interior-point solver for small convex QPs
//   minimize 1/2 z'Qz + c'z  subject to  G z <= h
// (Mehrotra predictor-corrector, infeasible start).
namespace pwlc::qp {

struct Problem {
  Mat Q;  // PSD, may be zero
  Vec c;
  Mat G;
  Vec h;
};

enum class Status { Optimal, MaxIterations, Numerical };

struct Solution {
  Status status = Status::Numerical;
  Vec z;
  Vec s;
  Vec lambda;
  double objective = 0.0;
  int iterations = 0;
};

struct Options {
  double tol = 1e-9;
  int max_iter = 80;
};

inline double max_step(const Vec& v, const Vec& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

inline Solution solve(const Problem& prob, const Options& opt = {}) {
  const auto k = prob.c.size();
  const auto m = prob.h.size();
  Solution sol;
  sol.z = Vec::Zero(k);
  sol.s = (prob.h - prob.G * sol.z).cwiseMax(1.0);
  sol.lambda = Vec::Ones(m);
  const double scale_h = 1.0 + prob.h.cwiseAbs().maxCoeff();
  const double scale_c = 1.0 + (prob.c.size() ? prob.c.cwiseAbs().maxCoeff() : 0.0);
  Mat Q = prob.Q.size() ? prob.Q : Mat::Zero(k, k);

  for (int it = 0; it < opt.max_iter; ++it) {
    sol.iterations = it;
    Vec& z = sol.z;
    Vec& s = sol.s;
    Vec& lam = sol.lambda;
    const Vec rd = Q * z + prob.c + prob.G.transpose() * lam;
    const Vec rp = prob.G * z + s - prob.h;
    const double mu = m ? s.dot(lam) / static_cast<double>(m) : 0.0;
    if (rp.cwiseAbs().maxCoeff() <= opt.tol * scale_h && rd.cwiseAbs().maxCoeff() <= opt.tol * scale_c &&
        mu <= opt.tol * std::max(1.0, std::abs(0.5 * z.dot(Q * z) + prob.c.dot(z)))) {
      sol.status = Status::Optimal;
      break;
    }
    const Vec w = lam.cwiseQuotient(s);
    Mat K = Q + prob.G.transpose() * w.asDiagonal() * prob.G;
    K.diagonal().array() += 1e-13 * (1.0 + K.diagonal().cwiseAbs().maxCoeff());
    Eigen::LDLT<Mat> ldlt(K);
    if (ldlt.info() != Eigen::Success) {
      sol.status = Status::Numerical;
      return sol;
    }
    auto direction = [&](const Vec& rc, Vec& dz, Vec& ds, Vec& dl) {
      const Vec rhs = -rd - prob.G.transpose() * (w.cwiseProduct(rp)) + prob.G.transpose() * rc.cwiseQuotient(s);
      dz = ldlt.solve(rhs);
      dl = w.cwiseProduct(prob.G * dz + rp) - rc.cwiseQuotient(s);
      ds = -(rc + s.cwiseProduct(dl)).cwiseQuotient(lam);
    };
    Vec dz, ds, dl;
    const Vec rc_aff = s.cwiseProduct(lam);
    direction(rc_aff, dz, ds, dl);
    const double a_aff = std::min(max_step(s, ds), max_step(lam, dl));
    const double mu_aff = m ? (s + a_aff * ds).dot(lam + a_aff * dl) / static_cast<double>(m) : 0.0;
    const double sigma = mu > 0 ? std::pow(mu_aff / mu, 3) : 0.0;
    const Vec rc = rc_aff + ds.cwiseProduct(dl) - Vec::Constant(m, sigma * mu);
    direction(rc, dz, ds, dl);
    const double a = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(lam, dl)));
    z += a * dz;
    s += a * ds;
    lam += a * dl;
    if (!z.allFinite() || !s.allFinite() || !lam.allFinite()) {
      sol.status = Status::Numerical;
      return sol;
    }
    sol.status = Status::MaxIterations;
  }
  sol.objective = 0.5 * sol.z.dot(Q * sol.z) + prob.c.dot(sol.z);
  return sol;
}

// Upper bound on max { f(s) : G s <= h, lo <= s <= hi } for a concave
// quadratic f(s) = s'Hs + g's + c0 (H negative semidefinite), valid for any
// point s_hat and any multipliers lambda >= 0. Uses f(s) <= f(s_hat) +
// grad'(s - s_hat) and maximizes the resulting affine Lagrangian over the box
// exactly, so an inaccurate or failed solve only loosens the bound.
inline double concave_box_dual_bound(const Mat& H, const Vec& g, double c0, const Mat& G, const Vec& h, const Vec& lo,
                                     const Vec& hi, const Vec& s_hat, const Vec& lambda) {
  const Vec grad = 2.0 * H * s_hat + g;
  const double f_hat = s_hat.dot(H * s_hat) + g.dot(s_hat) + c0;
  const Vec lam = lambda.cwiseMax(0.0);
  const Vec coef = grad - G.transpose() * lam;
  double box = 0.0;
  for (Eigen::Index i = 0; i < coef.size(); ++i) box += std::max(coef[i] * lo[i], coef[i] * hi[i]);
  return f_hat - grad.dot(s_hat) + lam.dot(h) + box;
}

}  // namespace pwlc::qp
