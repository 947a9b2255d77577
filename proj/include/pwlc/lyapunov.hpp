#pragma once

#include <functional>
#include <optional>
#include <variant>
#include <ostream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "identify.hpp"

namespace pwlc::lyapunov {

// (x, x+, x++) generated by the closed loop, with the disturbances used.
struct Triple {
  Vec x;
  Vec x1;
  Vec x2;
  Vec d0;
  Vec d1;
};

inline Vec stack(const Vec& a, const Vec& b) {
  Vec z(a.size() + b.size());
  z << a, b;
  return z;
}

inline double delta_v(const Mat& P, const Triple& t) {
  const Vec z0 = stack(t.x, t.x1), z1 = stack(t.x1, t.x2);
  return z1.dot(P * z1) - z0.dot(P * z0);
}

// Symmetric N x N matrices <-> vectors of the N(N+1)/2 upper-triangular entries.
struct SymBasis {
  int N = 0;
  std::vector<std::pair<int, int>> entries;

  explicit SymBasis(int dim = 0) : N(dim) {
    for (int i = 0; i < N; ++i)
      for (int j = i; j < N; ++j) entries.emplace_back(i, j);
  }
  int size() const { return static_cast<int>(entries.size()); }

  Mat matrix(const Vec& p) const {
    Mat P = Mat::Zero(N, N);
    for (int k = 0; k < size(); ++k) {
      auto [i, j] = entries[k];
      P(i, j) = p[k];
      P(j, i) = p[k];
    }
    return P;
  }
  Vec params(const Mat& P) const {
    Vec p(size());
    for (int k = 0; k < size(); ++k) p[k] = P(entries[k].first, entries[k].second);
    return p;
  }
  // <P(p), M> as a linear functional of p.
  Vec functional(const Mat& M) const {
    Vec g(size());
    for (int k = 0; k < size(); ++k) {
      auto [i, j] = entries[k];
      g[k] = i == j ? M(i, i) : M(i, j) + M(j, i);
    }
    return g;
  }
  Mat unit(int k) const {
    Mat E = Mat::Zero(N, N);
    auto [i, j] = entries[k];
    E(i, j) = 1.0;
    E(j, i) = 1.0;
    return E;
  }
};

// Log-barrier -sum log(c_i.y + e_i) - sum log det(F0 + sum_k y_k F_k) plus a
// linear term w.y, with exact gradient and Hessian.
struct Barrier {
  std::vector<Vec> c;
  std::vector<double> e;
  struct Lmi {
    Mat F0;
    std::vector<Mat> F;
  };
  std::vector<Lmi> lmis;
  Vec w;

  struct Eval {
    bool feasible = false;
    double value = 0.0;
    Vec grad;
    Mat hess;
  };

  Eval evaluate(const Vec& y, bool derivatives) const {
    Eval ev;
    const auto dim = y.size();
    ev.value = w.size() ? w.dot(y) : 0.0;
    if (derivatives) {
      ev.grad = w.size() ? w : Vec::Zero(dim);
      ev.hess = Mat::Zero(dim, dim);
    }
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double r = c[i].dot(y) + e[i];
      if (!(r > 0.0)) return ev;
      ev.value -= std::log(r);
      if (derivatives) {
        ev.grad -= c[i] / r;
        ev.hess.noalias() += c[i] * c[i].transpose() / (r * r);
      }
    }
    for (const auto& L : lmis) {
      Mat F = L.F0;
      for (Eigen::Index k = 0; k < dim; ++k)
        if (y[k] != 0.0) F += y[k] * L.F[k];
      Eigen::LLT<Mat> llt(F);
      if (llt.info() != Eigen::Success) return ev;
      const Mat Lc = llt.matrixL();
      double logdet = 0.0;
      for (Eigen::Index i = 0; i < Lc.rows(); ++i) {
        if (!(Lc(i, i) > 0.0)) return ev;
        logdet += 2.0 * std::log(Lc(i, i));
      }
      ev.value -= logdet;
      if (derivatives) {
        const Mat Finv = llt.solve(Mat::Identity(F.rows(), F.cols()));
        std::vector<Mat> G(dim);
        for (Eigen::Index k = 0; k < dim; ++k) {
          G[k] = Finv * L.F[k];
          ev.grad[k] -= G[k].trace();
        }
        for (Eigen::Index k = 0; k < dim; ++k)
          for (Eigen::Index l = k; l < dim; ++l) {
            const double v = (G[k].array() * G[l].transpose().array()).sum();
            ev.hess(k, l) += v;
            if (l != k) ev.hess(l, k) += v;
          }
      }
    }
    ev.feasible = std::isfinite(ev.value);
    return ev;
  }
};

struct NewtonResult {
  Vec y;
  bool converged = false;
  int iterations = 0;
  double decrement = 0.0;
  Mat hess;
};

// Damped Newton for a self-concordant barrier from a strictly feasible start.
inline NewtonResult newton_center(const Barrier& b, Vec y, int max_iter = 200, double tol = 1e-9) {
  NewtonResult out;
  for (int it = 0; it < max_iter; ++it) {
    auto ev = b.evaluate(y, true);
    if (!ev.feasible) throw NumericalError("newton_center: iterate left the barrier domain");
    Eigen::LDLT<Mat> ldlt(ev.hess);
    const Vec step = -ldlt.solve(ev.grad);
    const double lambda = std::sqrt(std::max(0.0, -ev.grad.dot(step)));
    out.iterations = it + 1;
    out.decrement = lambda;
    out.hess = ev.hess;
    if (lambda < tol) {
      out.converged = true;
      break;
    }
    double t = lambda > 0.25 ? 1.0 / (1.0 + lambda) : 1.0;
    // Backtrack on the full step near convergence (quadratic phase), keeping feasibility.
    for (int bt = 0; bt < 60; ++bt) {
      auto trial = b.evaluate(y + t * step, false);
      if (trial.feasible && trial.value <= ev.value + 0.25 * t * ev.grad.dot(step)) break;
      t *= 0.5;
    }
    y += t * step;
  }
  out.y = std::move(y);
  return out;
}

struct Options {
  double tau = 1e-6;  // DeltaV <= -tau |x|^2
  double eps_acc = 1e-6;
  int max_newton = 200;
  double dedup_tol = 1e-9;
};

struct Candidate {
  Mat P;
  int iteration = 0;
  double margin = 0.0;  // min over samples of -DeltaV
  double log_det_hessian = 0.0;
};

struct Infeasible {
  double upper_bound = 0.0;  // certified bound on the best achievable margin
};

class Learner {
 public:
  explicit Learner(int n, Options opt = {}) : n_(n), basis_(2 * n), opt_(opt) {}

  const std::vector<Triple>& samples() const { return samples_; }
  const SymBasis& basis() const { return basis_; }
  int dim() const { return n_; }
  const Options& options() const { return opt_; }

  // Returns false for duplicates; throws ValidationError when `consistent` rejects the triple.
  bool add(const Triple& t, const std::function<bool(const Triple&)>& consistent = {}) {
    if (t.x.size() != n_ || t.x1.size() != n_ || t.x2.size() != n_) throw ValidationError("triple has the wrong dimension");
    if (consistent && !consistent(t)) throw ValidationError("triple is not reachable under the closed loop");
    for (const auto& s : samples_) {
      const double d = std::max({(s.x - t.x).cwiseAbs().maxCoeff(), (s.x1 - t.x1).cwiseAbs().maxCoeff(),
                                 (s.x2 - t.x2).cwiseAbs().maxCoeff()});
      if (d <= opt_.dedup_tol) return false;
    }
    samples_.push_back(t);
    return true;
  }

  // Analytic center of {0 < P < I, DeltaV_i <= -tau |x_i|^2}, or a certificate of emptiness.
  std::variant<Candidate, Infeasible> propose() {
    ++iteration_;
    const int d = basis_.size();
    const int N = basis_.N;
    auto cuts = cut_rows();

    // Phase 1: maximize t subject to every margin >= t, over y = (p, t).
    Barrier ph;
    for (const auto& [g, e] : cuts) {
      Vec c(d + 1);
      c << -g, -1.0;
      ph.c.push_back(c);
      ph.e.push_back(e);
    }
    Barrier::Lmi lower{Mat::Zero(N, N), {}}, upper{Mat::Identity(N, N), {}};
    for (int k = 0; k < d; ++k) {
      lower.F.push_back(basis_.unit(k));
      upper.F.push_back(-basis_.unit(k));
    }
    lower.F.push_back(-Mat::Identity(N, N));
    upper.F.push_back(-Mat::Identity(N, N));
    ph.lmis = {lower, upper};
    Vec y(d + 1);
    y.head(d) = basis_.params(0.5 * Mat::Identity(N, N));
    double t0 = 0.5;
    for (const auto& [g, e] : cuts) t0 = std::min(t0, -g.dot(y.head(d)) + e);
    y[d] = t0 - 1.0;
    const double M = static_cast<double>(cuts.size() + 2 * N);
    bool feasible = t0 > 0.0;
    double T = 1.0;
    while (!feasible) {
      ph.w = Vec::Zero(d + 1);
      ph.w[d] = -T;
      auto res = newton_center(ph, y, opt_.max_newton, 1e-7);
      y = res.y;
      if (y[d] > 0.0) {
        feasible = true;
        break;
      }
      // Exact centering gives t* <= t + M/T; an approximately centered point
      // (decrement below 0.1) is charged twice that.
      if (!res.converged && res.decrement > 0.1) throw NumericalError("ACCPM phase 1: Newton did not converge");
      const double bound = y[d] + (res.converged ? 1.0 : 2.0) * M / T;
      if (bound < opt_.eps_acc) return Infeasible{bound};
      T *= 8.0;
      if (T > 1e14) throw NumericalError("ACCPM phase 1: stalled without a decision");
    }

    // Analytic center over p.
    Barrier ac;
    for (const auto& [g, e] : cuts) {
      ac.c.push_back(-g);
      ac.e.push_back(e);
    }
    lower.F.pop_back();
    upper.F.pop_back();
    ac.lmis = {lower, upper};
    auto res = newton_center(ac, y.head(d), opt_.max_newton);
    // Thin feasible sets can stall Newton at round-off; any strictly feasible
    // point in the quadratic-convergence region is an acceptable query point.
    if (!res.converged && res.decrement > 1e-3) throw NumericalError("ACCPM: Newton did not reach the analytic center");
    Candidate cand;
    cand.P = basis_.matrix(res.y);
    cand.iteration = iteration_;
    cand.margin = std::numeric_limits<double>::infinity();
    for (const auto& s : samples_) cand.margin = std::min(cand.margin, -delta_v(cand.P, s));
    Eigen::LDLT<Mat> ldlt(res.hess);
    cand.log_det_hessian = ldlt.vectorD().array().log().sum();
    return cand;
  }

 private:
  // Each sample as margin(p) = -g.p + e >= 0 with the |x|^2 normalization.
  std::vector<std::pair<Vec, double>> cut_rows() const {
    std::vector<std::pair<Vec, double>> rows;
    for (const auto& s : samples_) {
      const double nx = s.x.squaredNorm();
      if (nx == 0.0) continue;
      const Vec z0 = stack(s.x, s.x1), z1 = stack(s.x1, s.x2);
      Vec g = basis_.functional(z1 * z1.transpose() - z0 * z0.transpose()) / nx;
      rows.emplace_back(std::move(g), -opt_.tau);
    }
    return rows;
  }

  int n_;
  SymBasis basis_;
  Options opt_;
  std::vector<Triple> samples_;
  int iteration_ = 0;
};

inline bool valid_candidate(const Mat& P, double tol = 0.0) {
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
  Eigen::SelfAdjointEigenSolver<Mat> es(P);
  return es.eigenvalues().minCoeff() > -tol && es.eigenvalues().maxCoeff() < 1.0 + tol;
}

inline nlohmann::json candidate_to_json(const Mat& P) { return identify::mat_to_json(P); }

inline Mat candidate_from_json(const nlohmann::json& j) {
  Mat P = identify::mat_from_json(j);
  if (P.rows() != P.cols() || (P - P.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ValidationError("Lyapunov candidate is not symmetric");
  return P;
}

inline void write_samples_csv(std::ostream& os, const std::vector<Triple>& samples) {
  if (samples.empty()) return;
  os.precision(17);
  const auto n = samples.front().x.size();
  const auto nd = samples.front().d0.size();
  const char* names[] = {"x0_", "x1_", "x2_"};
  for (const char* name : names)
    for (Eigen::Index i = 0; i < n; ++i) os << name << i + 1 << ',';
  for (Eigen::Index i = 0; i < nd; ++i) os << "d0_" << i + 1 << ',';
  for (Eigen::Index i = 0; i < nd; ++i) os << "d1_" << i + 1 << (i + 1 < nd ? "," : "");
  os << '\n';
  for (const auto& t : samples) {
    for (const Vec* v : {&t.x, &t.x1, &t.x2})
      for (Eigen::Index i = 0; i < n; ++i) os << (*v)[i] << ',';
    for (Eigen::Index i = 0; i < t.d0.size(); ++i) os << t.d0[i] << ',';
    for (Eigen::Index i = 0; i < t.d1.size(); ++i) os << t.d1[i] << (i + 1 < t.d1.size() ? "," : "");
    os << '\n';
  }
}

}  // namespace pwlc::lyapunov
