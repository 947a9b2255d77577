#pragma once

#include <deque>
#include <optional>

#include <json.hpp>

#include "core.hpp"

namespace pwlc::identify {

enum class BasisKind { Affine, General };

// Differentiable bases Phi(x) in R^p with Jacobian dPhi/dx in R^{p x n}.
struct BasisSet {
  BasisKind kind = BasisKind::Affine;
  int n = 0;
  int p = 0;
  std::function<Vec(const Vec&)> eval;
  std::function<Mat(const Vec&)> jacobian;

  // Phi(x) = [1, x^T]^T.
  static BasisSet affine(int n) {
    BasisSet b;
    b.kind = BasisKind::Affine;
    b.n = n;
    b.p = n + 1;
    b.eval = [n](const Vec& x) {
      Vec phi(n + 1);
      phi[0] = 1.0;
      phi.tail(n) = x;
      return phi;
    };
    b.jacobian = [n](const Vec&) {
      Mat J = Mat::Zero(n + 1, n);
      J.bottomRows(n).setIdentity();
      return J;
    };
    return b;
  }

  static BasisSet general(int n, int p, std::function<Vec(const Vec&)> eval, std::function<Mat(const Vec&)> jac) {
    BasisSet b;
    b.kind = BasisKind::General;
    b.n = n;
    b.p = p;
    b.eval = std::move(eval);
    b.jacobian = std::move(jac);
    return b;
  }
};

inline int regressor_size(const BasisSet& basis, int m) { return basis.p * (1 + m); }

// Theta = [Phi^T, Phi^T u_1, ..., Phi^T u_m]^T.
inline Vec regressor(const BasisSet& basis, const Vec& x, const Vec& u) {
  const Vec phi = basis.eval(x);
  const auto m = u.size();
  Vec theta(basis.p * (1 + m));
  theta.head(basis.p) = phi;
  for (Eigen::Index j = 0; j < m; ++j) theta.segment(basis.p * (1 + j), basis.p) = phi * u[j];
  return theta;
}

struct RlsOptions {
  double forgetting = 1.0;
  double kappa = 1e6;
};

// Per-piece model: the weight stack [W, W_1, ..., W_m] (n x p(1+m)) and the
// RLS inverse-information matrix.
struct PieceModel {
  Mat weights;
  Mat cov;
  long sample_count = 0;
  double avg_error = 0.0;
  long error_count = 0;

  static PieceModel zero(int n, int p, int m, double kappa = RlsOptions{}.kappa) {
    PieceModel pm;
    pm.weights = Mat::Zero(n, p * (1 + m));
    pm.cov = kappa * Mat::Identity(p * (1 + m), p * (1 + m));
    return pm;
  }

  int n() const { return static_cast<int>(weights.rows()); }
  int q() const { return static_cast<int>(weights.cols()); }

  Mat drift_weights(int p) const { return weights.leftCols(p); }
  Mat input_weights(int p, int j) const { return weights.middleCols(p * (1 + j), p); }
};

// Affine-kind layout: W = [C | A], W_j = [B_j | 0].
inline Mat stack_from_affine(const AffineModel& m) {
  const auto n = m.A.rows();
  const auto ni = m.B.cols();
  const auto p = n + 1;
  Mat W = Mat::Zero(n, p * (1 + ni));
  W.col(0) = m.C;
  W.block(0, 1, n, n) = m.A;
  for (Eigen::Index j = 0; j < ni; ++j) W.col(p * (1 + j)) = m.B.col(j);
  return W;
}

inline AffineModel affine_from_stack(const Mat& W, int m) {
  const auto n = W.rows();
  const auto p = n + 1;
  if (W.cols() != p * (1 + m)) throw UnsupportedError("weight stack does not have the affine layout");
  AffineModel am;
  am.C = W.col(0);
  am.A = W.block(0, 1, n, n);
  am.B = Mat(n, m);
  for (int j = 0; j < m; ++j) am.B.col(j) = W.col(p * (1 + j));
  return am;
}

inline AffineModel to_affine(const PieceModel& piece, const BasisSet& basis, int m) {
  if (basis.kind != BasisKind::Affine) throw UnsupportedError("affine decomposition needs the affine basis");
  return affine_from_stack(piece.weights, m);
}

// F^(x, u) = W Phi(x) + sum_j W_j Phi(x) u_j.
inline Vec predict(const PieceModel& piece, const BasisSet& basis, const Vec& x, const Vec& u) {
  return piece.weights * regressor(basis, x, u);
}

// Recursive least squares with forgetting factor. Returns false if the
// covariance lost positive definiteness and was reset.
inline bool rls_update(PieceModel& piece, const Vec& theta, const Vec& measured, const RlsOptions& opt = {}) {
  if (theta.size() != piece.q() || measured.size() != piece.n()) throw ConfigError("rls_update: dimension mismatch");
  const double lambda = opt.forgetting;
  const Vec Ptheta = piece.cov * theta;
  const double denom = lambda + theta.dot(Ptheta);
  const Vec gain = Ptheta / denom;
  const Vec innovation = measured - piece.weights * theta;
  piece.weights.noalias() += innovation * gain.transpose();
  piece.cov = symmetrized((piece.cov - gain * Ptheta.transpose()) / lambda);
  ++piece.sample_count;
  Eigen::LLT<Mat> llt(piece.cov);
  if (llt.info() != Eigen::Success || !piece.cov.allFinite()) {
    warn("rls_update: covariance lost positive definiteness, resetting");
    piece.cov = opt.kappa * Mat::Identity(piece.q(), piece.q());
    return false;
  }
  return true;
}

// Records the prediction error e = ||F~ - W Theta|| in the piece's running mean.
inline double observe_error(PieceModel& piece, const Vec& theta, const Vec& measured) {
  const double e = (measured - piece.weights * theta).norm();
  ++piece.error_count;
  piece.avg_error += (e - piece.avg_error) / static_cast<double>(piece.error_count);
  return e;
}

// Minimum-norm least squares for the weight stack over the given samples
// (columns of thetas paired with columns of derivs).
inline Mat batch_ls(const Mat& thetas, const Mat& derivs) {
  if (thetas.cols() != derivs.cols() || thetas.cols() == 0) throw ConfigError("batch_ls: need >= 1 matched sample");
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(thetas.transpose());
  return cod.solve(derivs.transpose()).transpose();
}

// ---------------------------------------------------------------------------
// Sample database

struct SampleRecord {
  Vec x;
  Vec u;
  Vec theta;
  Vec deriv;  // noisy or finite-difference derivative
  double error = 0.0;
  long seq = 0;  // global insertion order
};

class SampleDB {
 public:
  SampleDB() = default;
  SampleDB(std::size_t pieces, std::size_t capacity, double eta) : slots_(pieces), capacity_(capacity), eta_(eta) {
    if (capacity == 0) throw ConfigError("sample database capacity must be positive");
    if (!(eta > 0.0)) throw ConfigError("sample database threshold must be positive");
  }

  std::size_t pieces() const { return slots_.size(); }
  std::size_t capacity() const { return capacity_; }
  double eta() const { return eta_; }
  const std::deque<SampleRecord>& records(std::size_t sigma) const { return slots_.at(sigma); }
  std::size_t size(std::size_t sigma) const { return slots_.at(sigma).size(); }

  // Inserts iff error > eta * avg_error, or the piece holds fewer than
  // `bootstrap` records. A full piece drops its oldest record.
  bool insert(std::size_t sigma, SampleRecord rec, double avg_error, std::size_t bootstrap) {
    auto& slot = slots_.at(sigma);
    const bool accept = slot.size() < bootstrap || rec.error > eta_ * avg_error;
    if (!accept) return false;
    rec.seq = next_seq_++;
    if (slot.size() >= capacity_) slot.pop_front();
    slot.push_back(std::move(rec));
    return true;
  }

  // Appends unconditionally (used when loading from disk).
  void restore(std::size_t sigma, SampleRecord rec) {
    auto& slot = slots_.at(sigma);
    next_seq_ = std::max(next_seq_, rec.seq + 1);
    if (slot.size() >= capacity_) slot.pop_front();
    slot.push_back(std::move(rec));
  }

  void write_csv(std::ostream& os) const;

 private:
  std::vector<std::deque<SampleRecord>> slots_;
  std::size_t capacity_ = 200;
  double eta_ = 1.0;
  long next_seq_ = 0;
};

inline void SampleDB::write_csv(std::ostream& os) const {
  os.precision(17);
  bool header = false;
  for (std::size_t s = 0; s < slots_.size(); ++s) {
    for (const auto& r : slots_[s]) {
      if (!header) {
        os << "piece,seq";
        for (Eigen::Index i = 0; i < r.x.size(); ++i) os << ",x" << i + 1;
        for (Eigen::Index j = 0; j < r.u.size(); ++j) os << ",u" << j + 1;
        for (Eigen::Index i = 0; i < r.deriv.size(); ++i) os << ",dx" << i + 1;
        os << ",error\n";
        header = true;
      }
      os << s << ',' << r.seq;
      for (Eigen::Index i = 0; i < r.x.size(); ++i) os << ',' << r.x[i];
      for (Eigen::Index j = 0; j < r.u.size(); ++j) os << ',' << r.u[j];
      for (Eigen::Index i = 0; i < r.deriv.size(); ++i) os << ',' << r.deriv[i];
      os << ',' << r.error << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint

inline nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

inline Mat mat_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return Mat();
  Mat m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) throw ValidationError("ragged matrix in checkpoint");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

inline nlohmann::json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec vec_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct ModelSet {
  BasisKind kind = BasisKind::Affine;
  int n = 0;
  int m = 0;
  std::vector<PieceModel> pieces;
};

inline nlohmann::json to_json(const ModelSet& set) {
  nlohmann::json pieces = nlohmann::json::array();
  for (const auto& p : set.pieces)
    pieces.push_back({{"weights", mat_to_json(p.weights)},
                      {"sample_count", p.sample_count},
                      {"avg_error", p.avg_error},
                      {"error_count", p.error_count}});
  return {{"basis", set.kind == BasisKind::Affine ? "affine" : "general"}, {"n", set.n}, {"m", set.m}, {"pieces", pieces}};
}

inline ModelSet modelset_from_json(const nlohmann::json& j, double kappa = RlsOptions{}.kappa) {
  ModelSet set;
  const auto kind = j.at("basis").get<std::string>();
  if (kind != "affine" && kind != "general") throw ValidationError("model checkpoint: unknown basis kind");
  set.kind = kind == "affine" ? BasisKind::Affine : BasisKind::General;
  set.n = j.at("n").get<int>();
  set.m = j.at("m").get<int>();
  for (const auto& pj : j.at("pieces")) {
    PieceModel p;
    p.weights = mat_from_json(pj.at("weights"));
    if (p.weights.rows() != set.n) throw ValidationError("model checkpoint: weight rows differ from n");
    p.cov = kappa * Mat::Identity(p.weights.cols(), p.weights.cols());
    p.sample_count = pj.at("sample_count").get<long>();
    p.avg_error = pj.at("avg_error").get<double>();
    p.error_count = pj.at("error_count").get<long>();
    set.pieces.push_back(std::move(p));
  }
  return set;
}

}  // namespace pwlc::identify
