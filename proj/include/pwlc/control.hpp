#pragma once

#include <Eigen/Eigenvalues>

#include "dynamics.hpp"
#include "identify.hpp"

namespace pwlc::control {

using identify::BasisKind;
using identify::BasisSet;
using identify::PieceModel;

struct CostSpec {
  Mat Q;
  Vec r;  // diagonal of R
  double gamma = 0.0;
  Mat Qbar;  // Q lifted to basis coordinates

  static CostSpec affine(const Mat& Q, const Vec& r, double gamma = 0.0) {
    CostSpec c{Q, r, gamma, Mat::Zero(Q.rows() + 1, Q.rows() + 1)};
    c.Qbar.bottomRightCorner(Q.rows(), Q.cols()) = Q;
    c.validate();
    return c;
  }

  void validate() const {
    if (Q.rows() != Q.cols()) throw ConfigError("cost: Q must be square");
    if ((r.array() <= 0.0).any()) throw ConfigError("cost: R must have positive diagonal");
    if (!(gamma >= 0.0)) throw ConfigError("cost: discount must be non-negative");
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(Q));
    if (es.eigenvalues().minCoeff() < -1e-12) throw ConfigError("cost: Q must be positive semi-definite");
  }

  dynamics::StageCost stage() const { return {Q, r, gamma}; }
};

struct ValueMatrix {
  std::vector<Mat> P;
  double h_P = 0.005;
  std::vector<double> updated_at;
  std::vector<char> diverged;

  static ValueMatrix init(std::size_t pieces, int p, double h_P, double scale = 1e-2) {
    ValueMatrix v;
    v.P.assign(pieces, scale * Mat::Identity(p, p));
    v.h_P = h_P;
    v.updated_at.assign(pieces, 0.0);
    v.diverged.assign(pieces, 0);
    return v;
  }
};

// Forward-time right-hand side of the matrix Riccati ODE:
// Q^ + P Phi' W + (Phi' W)^T P - gamma P - P Phi' (sum_j W_j Phi r_j^-1 Phi^T W_j^T) Phi'^T P.
inline Mat riccati_rhs(const Mat& P, const PieceModel& piece, const BasisSet& basis, const CostSpec& cost, const Vec& x) {
  const int p = basis.p;
  const auto m = cost.r.size();
  const Vec phi = basis.eval(x);
  const Mat J = basis.jacobian(x);  // p x n
  const Mat JW = J * piece.drift_weights(p);  // p x p
  Mat S = Mat::Zero(J.cols(), J.cols());
  for (Eigen::Index j = 0; j < m; ++j) {
    const Vec b = piece.input_weights(p, static_cast<int>(j)) * phi;
    S.noalias() += b * b.transpose() / cost.r[j];
  }
  const Mat PJ = P * J;
  return cost.Qbar + P * JW + JW.transpose() * P - cost.gamma * P - PJ * S * PJ.transpose();
}

struct StepResult {
  Mat P;
  bool diverged = false;
};

// One classical RK4 step of the forward-time ODE at fixed x, symmetrized.
inline StepResult riccati_step(const Mat& P, const PieceModel& piece, const BasisSet& basis, const CostSpec& cost,
                               const Vec& x, double h, double cap = 1e8) {
  auto f = [&](const Mat& Y) { return riccati_rhs(symmetrized(Y), piece, basis, cost, x); };
  const Mat k1 = f(P);
  const Mat k2 = f(P + 0.5 * h * k1);
  const Mat k3 = f(P + 0.5 * h * k2);
  const Mat k4 = f(P + h * k3);
  StepResult out;
  out.P = symmetrized(P + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  out.diverged = !out.P.allFinite() || out.P.norm() > cap;
  return out;
}

inline double value(const Mat& P, const BasisSet& basis, const Vec& x) {
  const Vec phi = basis.eval(x);
  return phi.dot(P * phi);
}

// u_j = -r_j^-1 Phi^T P Phi' W_j Phi before saturation.
inline Vec feedback_unsaturated(const Mat& P, const PieceModel& piece, const BasisSet& basis, const CostSpec& cost,
                                const Vec& x) {
  const int p = basis.p;
  const auto m = cost.r.size();
  const Vec phi = basis.eval(x);
  const Mat J = basis.jacobian(x);
  const Vec left = P * phi;
  Vec u(m);
  for (Eigen::Index j = 0; j < m; ++j) u[j] = -left.dot(J * (piece.input_weights(p, static_cast<int>(j)) * phi)) / cost.r[j];
  return u;
}

inline Vec feedback(const Mat& P, const PieceModel& piece, const BasisSet& basis, const CostSpec& cost, const Vec& x,
                    const Vec& u_bar) {
  return dynamics::saturate(feedback_unsaturated(P, piece, basis, cost, x), u_bar);
}

struct AffineGains {
  Mat K;  // m x n
  Vec k;  // m
  Vec operator()(const Vec& x) const { return -(K * x + k); }
};

// P blocked over (1, x): K = R^-1 B^T P22, k = R^-1 B^T P12.
inline AffineGains extract_affine_gains(const Mat& P, const AffineModel& model, const Vec& r, bool linear_only = false) {
  const auto n = model.A.rows();
  if (P.rows() != n + 1) throw UnsupportedError("affine gains need the affine basis value matrix");
  const Mat P22 = P.bottomRightCorner(n, n);
  const Vec p12 = P.bottomLeftCorner(n, 1);
  const Mat RinvBt = r.cwiseInverse().asDiagonal() * model.B.transpose();
  AffineGains g;
  g.K = RinvBt * P22;
  g.k = linear_only ? Vec::Zero(r.size()) : Vec(RinvBt * p12);
  return g;
}

// Continuous algebraic Riccati equation A^T P + P A - P B R^-1 B^T P + Q = 0,
// solved with the scaled matrix sign function of the Hamiltonian.
inline Mat care(const Mat& A, const Mat& B, const Mat& Q, const Vec& r) {
  const auto n = A.rows();
  Mat H(2 * n, 2 * n);
  H << A, -B * r.cwiseInverse().asDiagonal() * B.transpose(), -Q, -A.transpose();
  Mat Z = H;
  const double nn = static_cast<double>(2 * n);
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    Eigen::PartialPivLU<Mat> lu(Z);
    const double det = std::abs(lu.determinant());
    if (!(det > 0.0) || !std::isfinite(det)) throw NumericalError("care: Hamiltonian has eigenvalues on the imaginary axis");
    const double c = std::pow(det, -1.0 / nn);
    Mat next = 0.5 * (c * Z + lu.inverse() / c);
    const double change = (next - Z).norm() / std::max(1.0, Z.norm());
    Z = std::move(next);
    if (change < 1e-13) {
      converged = true;
      break;
    }
  }
  if (!converged) throw NumericalError("care: sign iteration did not converge");
  const Mat I = Mat::Identity(n, n);
  Mat lhs(2 * n, n), rhs(2 * n, n);
  lhs << Z.topRightCorner(n, n), Z.bottomRightCorner(n, n) + I;
  rhs << Z.topLeftCorner(n, n) + I, Z.bottomLeftCorner(n, n);
  Mat P = symmetrized(lhs.colPivHouseholderQr().solve(-rhs));
  const Mat Acl = A - B * r.cwiseInverse().asDiagonal() * B.transpose() * P;
  if (Acl.eigenvalues().real().maxCoeff() >= 0.0) throw NumericalError("care: pair is not stabilizable");
  return P;
}

inline nlohmann::json to_json(const ValueMatrix& vm, const std::vector<AffineGains>& gains = {}) {
  using identify::mat_to_json;
  using identify::vec_to_json;
  nlohmann::json pieces = nlohmann::json::array();
  for (std::size_t s = 0; s < vm.P.size(); ++s) {
    nlohmann::json j{{"P", mat_to_json(vm.P[s])}, {"updated_at", vm.updated_at[s]}, {"diverged", vm.diverged[s] != 0}};
    if (s < gains.size()) {
      j["K"] = mat_to_json(gains[s].K);
      j["k"] = vec_to_json(gains[s].k);
    }
    pieces.push_back(std::move(j));
  }
  return {{"h_P", vm.h_P}, {"pieces", pieces}};
}

inline ValueMatrix value_matrix_from_json(const nlohmann::json& j) {
  ValueMatrix vm;
  vm.h_P = j.at("h_P").get<double>();
  for (const auto& pj : j.at("pieces")) {
    Mat P = identify::mat_from_json(pj.at("P"));
    if (P.rows() != P.cols() || (P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10)
      throw ValidationError("controller checkpoint: P is not symmetric");
    vm.P.push_back(std::move(P));
    vm.updated_at.push_back(pj.at("updated_at").get<double>());
    vm.diverged.push_back(pj.at("diverged").get<bool>() ? 1 : 0);
  }
  return vm;
}

}  // namespace pwlc::control
