#include <gtest/gtest.h>

#include <random>

#include "pwlc/uncertainty.hpp"

using namespace pwlc;
using identify::BasisSet;
using identify::PieceModel;
using identify::SampleRecord;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Box box1(double a, double b) { return Box(Vec::Constant(1, a), Vec::Constant(1, b)); }
Box box2(double a, double b) { return Box(Vec::Constant(2, a), Vec::Constant(2, b)); }

SampleRecord record(const BasisSet& basis, const Vec& x, const Vec& u, const Vec& deriv) {
  SampleRecord r;
  r.x = x;
  r.u = u;
  r.theta = identify::regressor(basis, x, u);
  r.deriv = deriv;
  return r;
}

// Pendulum-like affine model for bounding tests.
AffineModel sample_model() {
  Mat A(2, 2);
  A << 0, 1, 19.0, -2.7;
  Mat B(2, 1);
  B << 0, 26.0;
  return {A, B, v2(0.01, -0.2)};
}

}  // namespace

TEST(SampleError, FormulaOnSmallSets) {
  const auto basis = BasisSet::affine(2);
  PieceModel pm = PieceModel::zero(2, basis.p, 1);
  const auto am = sample_model();
  pm.weights = identify::stack_from_affine(am);
  std::vector<SampleRecord> recs;
  EXPECT_FALSE(uncertainty::sample_error_bound(recs, pm, 0.0));
  const Vec x = v2(0.2, -0.1), u = Vec::Constant(1, 0.5);
  recs.push_back(record(basis, x, u, am(x, u)));
  EXPECT_EQ(uncertainty::sample_error_bound(recs, pm, 0.0)->norm(), 0.0);
  const Vec r = v2(0.03, -0.07);
  recs[0].deriv = am(x, u) + r;
  EXPECT_LT((*uncertainty::sample_error_bound(recs, pm, 0.0) - r.cwiseAbs()).norm(), 1e-12);
}

TEST(SampleError, EqualsDirectMaximum) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(-1, 1);
  const auto basis = BasisSet::affine(2);
  PieceModel pm = PieceModel::zero(2, basis.p, 1);
  const auto am = sample_model();
  pm.weights = identify::stack_from_affine(am);
  const auto plant = dynamics::pendulum();
  std::vector<SampleRecord> recs;
  for (int k = 0; k < 50; ++k) {
    const Vec x = v2(0.5 * U(rng), 0.5 * U(rng)), u = Vec::Constant(1, 6 * U(rng));
    recs.push_back(record(basis, x, u, dynamics::measure_derivative(plant, x, u, rng)));
  }
  const double rho = 1e-3;
  Vec direct = Vec::Zero(2);
  for (const auto& s : recs)
    for (int i = 0; i < 2; ++i)
      direct[i] = std::max(direct[i], std::abs(am(s.x, s.u)[i] - s.deriv[i]) + rho * std::abs(s.deriv[i]));
  EXPECT_LT((*uncertainty::sample_error_bound(recs, pm, rho) - direct).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ControlGap, SortedGapExamples) {
  const Box omega = box1(-6, 6);
  auto pts = [](std::initializer_list<double> v) {
    std::vector<Vec> out;
    for (double a : v) out.push_back(Vec::Constant(1, a));
    return out;
  };
  auto b = uncertainty::largest_empty_ball_control(pts({-6, 0, 6}), omega);
  EXPECT_NEAR(b.radius, 3.0, 1e-12);
  EXPECT_NEAR(std::abs(b.center[0]), 3.0, 1e-12);
  auto none = uncertainty::largest_empty_ball_control({}, omega);
  EXPECT_NEAR(none.radius, 6.0, 1e-12);
  EXPECT_NEAR(none.center[0], 0.0, 1e-12);
  std::vector<Vec> dense;
  const double delta = 0.25;
  for (int k = 0; k <= 48; ++k) dense.push_back(Vec::Constant(1, -6 + delta * k));
  EXPECT_NEAR(uncertainty::largest_empty_ball_control(dense, omega).radius, delta / 2, 1e-12);
}

TEST(StateGap, CentroidAndEmptyCell) {
  auto cell = partition::Polytope::from_box(box2(0, 2));
  auto one = uncertainty::largest_empty_ball_state({v2(1, 1)}, cell);
  EXPECT_NEAR(one.radius, std::sqrt(2.0), 1e-12);
  auto none = uncertainty::largest_empty_ball_state({}, cell);
  EXPECT_NEAR(none.radius, 1.0, 1e-8);  // interior-point LP accuracy
  // One-dimensional cells use the sorted-gap scan.
  auto seg = uncertainty::largest_empty_ball_state({Vec::Constant(1, 0.5)}, partition::Polytope::from_box(box1(0, 4)));
  EXPECT_NEAR(seg.radius, 3.5, 1e-12);
}

TEST(StateGap, DenseGridBoundInThreeDimensions) {
  auto cell = partition::Polytope::from_box(Box(Vec::Zero(3), Vec::Ones(3)));
  std::vector<Vec> samples;
  const double delta = 0.25;
  for (int i = 0; i <= 4; ++i)
    for (int j = 0; j <= 4; ++j)
      for (int k = 0; k <= 4; ++k) {
        Vec x(3);
        x << i * delta, j * delta, k * delta;
        samples.push_back(x);
      }
  auto b = uncertainty::largest_empty_ball_state(samples, cell, 21);
  // True gap is the half cube diagonal of the sample grid; the grid bound may only exceed it.
  const double exact = delta * std::sqrt(3.0) / 2;
  EXPECT_GE(b.radius, exact - 1e-12);
  EXPECT_LE(b.radius, exact + std::sqrt(3.0) / 20 / 2 + 1e-12);
}

TEST(StateGap, AddingSamplesNeverGrowsRadius) {
  // From the first sample on; an empty piece reports its inscribed ball and is unbounded anyway.
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> U(-1, 1);
  auto cell = partition::Polytope::from_box(box2(-1, 1));
  const Box omega = box1(-6, 6);
  std::vector<Vec> xs{v2(U(rng), U(rng))};
  std::vector<Vec> us{Vec::Constant(1, 6 * U(rng))};
  double rx = uncertainty::largest_empty_ball_state(xs, cell).radius;
  double ru = uncertainty::largest_empty_ball_control(us, omega).radius;
  for (int k = 0; k < 60; ++k) {
    xs.push_back(v2(U(rng), U(rng)));
    us.push_back(Vec::Constant(1, 6 * U(rng)));
    const double nx = uncertainty::largest_empty_ball_state(xs, cell).radius;
    const double nu = uncertainty::largest_empty_ball_control(us, omega).radius;
    EXPECT_LE(nx, rx + 1e-12);
    EXPECT_LE(nu, ru + 1e-12);
    rx = nx;
    ru = nu;
  }
}

TEST(SampleError, FixedModelBoundTracksTheRecordSet) {
  // For a fixed model, d_e over a fixed evaluation set ignores database growth,
  // and d_e over the database is a running maximum.
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> U(-1, 1);
  const auto basis = BasisSet::affine(2);
  const auto plant = dynamics::pendulum();
  PieceModel pm = PieceModel::zero(2, basis.p, 1);
  pm.weights = identify::stack_from_affine(sample_model());
  auto draw = [&]() {
    const Vec x = v2(U(rng), U(rng)), u = Vec::Constant(1, 6 * U(rng));
    return record(basis, x, u, dynamics::measure_derivative(plant, x, u, rng));
  };
  std::vector<SampleRecord> eval;
  for (int k = 0; k < 20; ++k) eval.push_back(draw());
  const Vec fixed = *uncertainty::sample_error_bound(eval, pm, 1e-3);
  identify::SampleDB db(1, 1000, 1e-9);
  Vec prev = Vec::Zero(2);
  for (int k = 0; k < 100; ++k) {
    auto r = draw();
    r.error = 1.0;
    ASSERT_TRUE(db.insert(0, r, 0.0, 0));
    const Vec now = *uncertainty::sample_error_bound(db.records(0), pm, 1e-3);
    EXPECT_TRUE((now.array() >= prev.array()).all());
    EXPECT_EQ(*uncertainty::sample_error_bound(eval, pm, 1e-3), fixed);
    prev = now;
  }
}

TEST(ModelLipschitz, RowNorms) {
  const auto basis = BasisSet::affine(2);
  PieceModel pm = PieceModel::zero(2, basis.p, 1);
  pm.weights = identify::stack_from_affine({Mat::Identity(2, 2), Mat::Zero(2, 1), Vec::Zero(2)});
  auto l = uncertainty::model_lipschitz(pm, basis, 1);
  EXPECT_EQ(l.x, Vec::Ones(2));
  EXPECT_EQ(l.u, Vec::Zero(2));
  EXPECT_FALSE(l.heuristic);
  const double a = 19.62, bb = -2.6667;
  Mat A(2, 2);
  A << 0, 1, a, bb;
  Mat B(2, 1);
  B << 0.5, 26.0;
  pm.weights = identify::stack_from_affine({A, B, Vec::Zero(2)});
  l = uncertainty::model_lipschitz(pm, basis, 1);
  EXPECT_NEAR(l.x[0], 1.0, 1e-15);
  EXPECT_NEAR(l.x[1], std::hypot(a, bb), 1e-12);
  EXPECT_NEAR(l.u[1], 26.0, 1e-15);
}

TEST(ModelLipschitz, GeneralBasisIsInflatedGridMaximum) {
  auto basis = BasisSet::general(
      1, 2, [](const Vec& x) { return v2(1.0, std::sin(x[0])); },
      [](const Vec& x) {
        Mat J(2, 1);
        J << 0.0, std::cos(x[0]);
        return J;
      });
  PieceModel pm = PieceModel::zero(1, 2, 1);
  pm.weights << 0.0, 2.0, 0.5, 0.0;  // F = 2 sin x + 0.5 u
  auto l = uncertainty::model_lipschitz(pm, basis, 1, box1(-1, 1), Vec::Constant(1, 1.0));
  EXPECT_TRUE(l.heuristic);
  EXPECT_NEAR(l.x[0], 1.1 * 2.0, 1e-12);
  EXPECT_NEAR(l.u[0], 1.1 * 0.5, 1e-12);
  EXPECT_THROW(uncertainty::model_lipschitz(pm, basis, 1), ConfigError);
}

TEST(TotalBound, SumsTheTerms) {
  uncertainty::PieceBound pb;
  pb.bounded = true;
  pb.d_e = v2(0.1, 0.2);
  pb.state_gap.radius = 0.0;
  pb.control_gap.radius = 0.0;
  pb.lip_x_hat = v2(1, 20);
  pb.lip_u_hat = v2(0, 26);
  const Vec lx = v2(1, 19.8), lu = v2(0, 26.7);
  EXPECT_EQ(uncertainty::total_bound(pb, lx, lu), pb.d_e);
  pb.state_gap.radius = 0.05;
  pb.control_gap.radius = 0.3;
  const Vec expect = (lu + pb.lip_u_hat) * 0.3 + (lx + pb.lip_x_hat) * 0.05 + pb.d_e;
  EXPECT_LT((uncertainty::total_bound(pb, lx, lu) - expect).norm(), 1e-15);
  pb.bounded = false;
  EXPECT_THROW(uncertainty::total_bound(pb, lx, lu), ValidationError);
}

TEST(Report, PendulumPiecesEqualHandSums) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> U(-1, 1);
  auto plant = dynamics::pendulum();
  auto part = partition::make_grid_partition(box2(-6, 6), std::vector<int>{3, 3});
  plant.domain = part.domain;
  const auto basis = BasisSet::affine(2);
  std::vector<PieceModel> models(part.size(), PieceModel::zero(2, basis.p, 1));
  identify::SampleDB db(part.size(), 400, 0.05);
  for (int k = 0; k < 4000; ++k) {
    const Vec x = v2(6 * U(rng), 6 * U(rng)), u = Vec::Constant(1, 6 * U(rng));
    const int s = partition::locate(part, x).sigma;
    auto r = record(basis, x, u, dynamics::measure_derivative(plant, x, u, rng));
    identify::rls_update(models[s], r.theta, r.deriv);
    r.error = identify::observe_error(models[s], r.theta, r.deriv);
    db.insert(s, r, models[s].avg_error, 12);
  }
  uncertainty::Options opt;
  opt.rho_e = plant.meas_tol;
  const auto rep = uncertainty::compute_report(plant, part, models, basis, db, opt);
  ASSERT_TRUE(rep.all_bounded());
  for (std::size_t s = 0; s < part.size(); ++s) {
    const auto& p = rep.pieces[s];
    const Vec hand = plant.lipschitz_u * p.control_gap.radius + plant.lipschitz_x * p.state_gap.radius + p.d_e +
                     p.lip_u_hat * p.control_gap.radius + p.lip_x_hat * p.state_gap.radius;
    EXPECT_LT((p.d_bar - hand).cwiseAbs().maxCoeff(), 1e-12 * hand.norm());
    EXPECT_TRUE((p.d_bar.array() >= p.d_e.array()).all());
    EXPECT_GE(p.state_gap.radius, 0.0);
    EXPECT_GE(p.control_gap.radius, 0.0);
  }
  const auto j = uncertainty::to_json(rep);
  EXPECT_EQ(j.at("pieces").size(), part.size());
}

TEST(Validate, ExactPiecewiseAffinePlantHasNoViolations) {
  auto part = partition::make_grid_partition(box2(-2, 2), std::vector<int>{2, 2});
  std::vector<AffineModel> models;
  for (std::size_t s = 0; s < part.size(); ++s) {
    auto m = sample_model();
    m.C = v2(0.1 * s, -0.3 * s);
    models.push_back(m);
  }
  dynamics::PlantSpec plant;
  plant.name = "pwa";
  plant.n = 2;
  plant.m = 1;
  plant.field = [part, models](const Vec& x, const Vec& u) { return models[partition::locate(part, x).sigma](x, u); };
  plant.u_bar = Vec::Constant(1, 1.0);
  plant.domain = part.domain;
  const auto v = uncertainty::validate_bound(plant, part, models, std::vector<Vec>(part.size(), Vec::Zero(2)), 41, 5);
  EXPECT_EQ(v.probes, 41u * 41u * 5u);
  EXPECT_EQ(v.count, 0u);
  // Perturbing one model makes the zero bound fail.
  auto wrong = models;
  wrong[1].C[0] += 1e-3;
  EXPECT_GT(uncertainty::validate_bound(plant, part, wrong, std::vector<Vec>(part.size(), Vec::Zero(2)), 41, 5).count, 0u);
}
