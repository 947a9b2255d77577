#pragma once

#include <unordered_map>

#include "partition.hpp"
#include "qp.hpp"

namespace pwlc::geometry {

using partition::Polytope;

struct Ball {
  Vec center;
  double radius = 0.0;
};

using Polygon = std::vector<Eigen::Vector2d>;

// Sutherland-Hodgman clip of a convex polygon by {x | a.x <= b}.
inline Polygon clip(const Polygon& poly, const Eigen::Vector2d& a, double b) {
  Polygon out;
  const auto k = poly.size();
  out.reserve(k + 1);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % k];
    const double fp = a.dot(p) - b, fq = a.dot(q) - b;
    if (fp <= 0) out.push_back(p);
    if ((fp < 0 && fq > 0) || (fp > 0 && fq < 0)) {
      const double t = fp / (fp - fq);
      out.push_back(p + t * (q - p));
    }
  }
  return out;
}

inline double polygon_area(const Polygon& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

// Largest ball centered in the polytope (Chebyshev center), by LP.
inline Ball chebyshev_ball(const Polytope& poly) {
  const int n = poly.dim();
  const auto rows = poly.Z.rows();
  qp::Problem lp;
  lp.Q = Mat::Zero(n + 1, n + 1);
  lp.c = Vec::Zero(n + 1);
  lp.c[n] = -1.0;
  lp.G = Mat::Zero(rows + 1, n + 1);
  lp.h = Vec::Zero(rows + 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double norm = poly.Z.row(r).norm();
    lp.G.row(r).head(n) = poly.Z.row(r) / norm;
    lp.G(r, n) = 1.0;
    lp.h[r] = poly.z[r] / norm;
  }
  lp.G(rows, n) = -1.0;
  auto sol = qp::solve(lp);
  if (sol.status != qp::Status::Optimal) throw NumericalError("chebyshev_ball: LP did not converge");
  return {sol.z.head(n), std::max(0.0, sol.z[n])};
}

// Exact largest empty circle in a convex polygon: the maximum over the polygon
// of the distance to the nearest site is attained at a vertex of some site's
// Voronoi cell clipped to the polygon. Cells are built by half-plane clipping;
// sites are visited in rings of hash buckets and clipping stops once the ring
// distance exceeds twice the cell's current radius.
inline Ball largest_empty_circle(const std::vector<Eigen::Vector2d>& sites, const Polygon& region) {
  if (sites.empty()) throw ConfigError("largest_empty_circle: no sites");
  Eigen::Vector2d lo = region.front(), hi = region.front();
  for (const auto& v : region) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  for (const auto& s : sites) {
    lo = lo.cwiseMin(s);
    hi = hi.cwiseMax(s);
  }
  const double area = std::max((hi - lo).prod(), 1e-300);
  const double bucket = std::max(std::sqrt(area / static_cast<double>(sites.size())) * 1.5, 1e-12);
  const int nx = std::max(1, static_cast<int>(std::ceil((hi.x() - lo.x()) / bucket)) + 1);
  const int ny = std::max(1, static_cast<int>(std::ceil((hi.y() - lo.y()) / bucket)) + 1);
  std::vector<std::vector<int>> grid(static_cast<std::size_t>(nx) * ny);
  auto cell_of = [&](const Eigen::Vector2d& p) {
    int ix = std::clamp(static_cast<int>((p.x() - lo.x()) / bucket), 0, nx - 1);
    int iy = std::clamp(static_cast<int>((p.y() - lo.y()) / bucket), 0, ny - 1);
    return std::pair{ix, iy};
  };
  for (std::size_t i = 0; i < sites.size(); ++i) {
    auto [ix, iy] = cell_of(sites[i]);
    grid[static_cast<std::size_t>(ix) * ny + iy].push_back(static_cast<int>(i));
  }

  Ball best;
  best.center = Vec::Zero(2);
  best.radius = -1.0;
  std::vector<char> duplicate(sites.size(), 0);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (duplicate[i]) continue;
    const Eigen::Vector2d& si = sites[i];
    Polygon cell = region;
    auto radius_of = [&](const Polygon& c) {
      double r = 0.0;
      for (const auto& v : c) r = std::max(r, (v - si).norm());
      return r;
    };
    double R = radius_of(cell);
    auto [cx, cy] = cell_of(si);
    const int max_ring = std::max(nx, ny);
    for (int ring = 0; ring <= max_ring && !cell.empty(); ++ring) {
      // Every site within distance ring * bucket has been processed once this ring is done.
      if (ring >= 1 && (ring - 1) * bucket > 2.0 * R) break;
      for (int ix = cx - ring; ix <= cx + ring; ++ix) {
        if (ix < 0 || ix >= nx) continue;
        for (int iy = cy - ring; iy <= cy + ring; ++iy) {
          if (iy < 0 || iy >= ny) continue;
          if (std::max(std::abs(ix - cx), std::abs(iy - cy)) != ring) continue;
          for (int j : grid[static_cast<std::size_t>(ix) * ny + iy]) {
            if (static_cast<std::size_t>(j) == i) continue;
            const Eigen::Vector2d& sj = sites[j];
            const Eigen::Vector2d dvec = sj - si;
            if (dvec.squaredNorm() == 0.0) {
              if (static_cast<std::size_t>(j) > i) duplicate[j] = 1;
              continue;
            }
            if (dvec.norm() > 2.0 * R) continue;
            cell = clip(cell, dvec, dvec.dot(0.5 * (si + sj)));
            if (cell.empty()) break;
            R = radius_of(cell);
          }
        }
      }
    }
    for (const auto& v : cell) {
      const double r = (v - si).norm();
      if (r > best.radius) {
        best.radius = r;
        best.center = v;
      }
    }
  }
  best.radius = std::max(best.radius, 0.0);
  return best;
}

inline Polygon polygon_of(const Polytope& poly) {
  Polygon out;
  for (const auto& v : poly.vertices()) out.emplace_back(v[0], v[1]);
  return out;
}

// Outer bounding box of a polytope (exact for n <= 2, by LP otherwise).
inline Box bounding_box(const Polytope& poly) {
  if (poly.dim() <= 2) return poly.bounding_box();
  const int n = poly.dim();
  Vec lo(n), hi(n);
  for (int i = 0; i < n; ++i) {
    for (int sgn : {1, -1}) {
      qp::Problem lp;
      lp.Q = Mat::Zero(n, n);
      lp.c = Vec::Zero(n);
      lp.c[i] = -sgn;
      lp.G = poly.Z;
      lp.h = poly.z;
      auto sol = qp::solve(lp);
      // Dual bound keeps the box outer even for an inexact solve.
      const double bound = sol.lambda.cwiseMax(0.0).dot(poly.z);
      if (sgn > 0) hi[i] = bound + 1e-9;
      else lo[i] = -bound - 1e-9;
    }
  }
  return Box(lo, hi);
}

// Certified upper bound on the largest empty ball for any dimension: the
// maximum over a bounding-box grid of the nearest-sample distance plus half
// the grid cell diagonal.
inline Ball empty_ball_grid_bound(const std::vector<Vec>& samples, const Box& box, int per_axis) {
  const int n = box.dim();
  Ball best;
  best.center = box.center();
  best.radius = 0.0;
  Vec pitch = box.width() / std::max(1, per_axis - 1);
  std::vector<int> idx(n, 0);
  for (;;) {
    Vec g(n);
    for (int i = 0; i < n; ++i) g[i] = per_axis == 1 ? box.center()[i] : box.lo[i] + pitch[i] * idx[i];
    double dmin = std::numeric_limits<double>::infinity();
    for (const auto& s : samples) dmin = std::min(dmin, (s - g).norm());
    if (samples.empty()) dmin = 0.0;
    if (dmin > best.radius) {
      best.radius = dmin;
      best.center = g;
    }
    int ax = n - 1;
    while (ax >= 0 && ++idx[ax] >= per_axis) idx[ax--] = 0;
    if (ax < 0) break;
  }
  best.radius += 0.5 * pitch.norm();
  return best;
}

}  // namespace pwlc::geometry
