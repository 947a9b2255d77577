#pragma once

#include <map>
#include <optional>
#include <set>

#include <json.hpp>

#include "core.hpp"

namespace pwlc::partition {

// Convex cell {x | Z x <= z}.
struct Polytope {
  Mat Z;
  Vec z;
  int index = 0;

  int dim() const { return static_cast<int>(Z.cols()); }

  bool contains(const Vec& x, double tol = 0.0) const {
    return ((Z * x - z).array() <= tol).all();
  }

  static Polytope from_box(const Box& box, int index = 0) {
    const int n = box.dim();
    Polytope p;
    p.Z = Mat::Zero(2 * n, n);
    p.z = Vec(2 * n);
    for (int i = 0; i < n; ++i) {
      p.Z(2 * i, i) = 1.0;
      p.z[2 * i] = box.hi[i];
      p.Z(2 * i + 1, i) = -1.0;
      p.z[2 * i + 1] = -box.lo[i];
    }
    p.index = index;
    return p;
  }

  // Counter-clockwise convex polygon to half-spaces.
  static Polytope from_polygon(const std::vector<Vec>& verts, int index = 0) {
    const auto k = verts.size();
    if (k < 3) throw ConfigError("polygon needs at least three vertices");
    Polytope p;
    p.Z = Mat(k, 2);
    p.z = Vec(k);
    for (std::size_t i = 0; i < k; ++i) {
      const Vec& a = verts[i];
      const Vec& b = verts[(i + 1) % k];
      Vec normal(2);
      normal << b[1] - a[1], -(b[0] - a[0]);
      const double len = normal.norm();
      if (len == 0.0) throw ConfigError("degenerate polygon edge");
      normal /= len;
      p.Z.row(i) = normal.transpose();
      p.z[i] = normal.dot(a);
    }
    p.index = index;
    return p;
  }

  // Vertex enumeration for n <= 2 (ordered counter-clockwise in 2-D).
  std::vector<Vec> vertices(double tol = 1e-9) const {
    const int n = dim();
    std::vector<Vec> out;
    if (n == 1) {
      double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
      for (Eigen::Index r = 0; r < Z.rows(); ++r) {
        if (Z(r, 0) > 0) hi = std::min(hi, z[r] / Z(r, 0));
        else if (Z(r, 0) < 0) lo = std::max(lo, z[r] / Z(r, 0));
      }
      if (lo <= hi) {
        out.push_back(Vec::Constant(1, lo));
        if (hi > lo) out.push_back(Vec::Constant(1, hi));
      }
      return out;
    }
    if (n != 2) throw UnsupportedError("vertex enumeration is implemented for n <= 2");
    const double scale = std::max(1.0, z.cwiseAbs().maxCoeff());
    for (Eigen::Index a = 0; a < Z.rows(); ++a) {
      for (Eigen::Index b = a + 1; b < Z.rows(); ++b) {
        Eigen::Matrix2d M;
        M << Z(a, 0), Z(a, 1), Z(b, 0), Z(b, 1);
        const double det = M.determinant();
        if (std::abs(det) < 1e-14) continue;
        Eigen::Vector2d rhs(z[a], z[b]);
        Vec v = M.inverse() * rhs;
        if (!contains(v, tol * scale)) continue;
        bool dup = false;
        for (const auto& w : out) dup = dup || (w - v).norm() <= tol * scale;
        if (!dup) out.push_back(v);
      }
    }
    if (out.size() >= 3) {
      Vec c = Vec::Zero(2);
      for (const auto& v : out) c += v;
      c /= static_cast<double>(out.size());
      std::sort(out.begin(), out.end(), [&](const Vec& p, const Vec& q) {
        return std::atan2(p[1] - c[1], p[0] - c[0]) < std::atan2(q[1] - c[1], q[0] - c[0]);
      });
    }
    return out;
  }

  Box bounding_box() const {
    auto verts = vertices();
    if (verts.empty()) throw ConsistencyError("empty polytope has no bounding box");
    Vec lo = verts.front(), hi = verts.front();
    for (const auto& v : verts) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    return Box(lo, hi);
  }
};

struct Partition {
  std::vector<Polytope> cells;
  Box domain;
  // Per-axis breakpoints when grid-generated; empty otherwise.
  std::vector<std::vector<double>> breakpoints;
  // Grid multi-index of each cell (grid-generated partitions only).
  std::vector<std::vector<int>> grid_index;

  std::size_t size() const { return cells.size(); }
  int dim() const { return domain.dim(); }
  double tol() const { return 1e-9 * std::max(1.0, domain.extent()); }
  bool is_grid() const { return !breakpoints.empty(); }
};

inline Partition make_grid_partition(const Box& domain, const std::vector<std::vector<double>>& breakpoints) {
  const int n = domain.dim();
  if (static_cast<int>(breakpoints.size()) != n) throw ConfigError("one breakpoint list per axis required");
  for (int i = 0; i < n; ++i) {
    const auto& b = breakpoints[i];
    if (b.size() < 2) throw ConfigError("each axis needs at least one cell");
    if (std::abs(b.front() - domain.lo[i]) > 1e-12 || std::abs(b.back() - domain.hi[i]) > 1e-12)
      throw ConfigError("breakpoints must span the domain box");
    for (std::size_t k = 1; k < b.size(); ++k)
      if (!(b[k] > b[k - 1])) throw ConfigError("breakpoints must be strictly increasing");
  }
  if (!domain.contains(Vec::Zero(n))) throw ConfigError("origin lies outside the partition domain");

  // Enumerate multi-indices, last axis fastest.
  std::vector<std::vector<int>> all;
  std::vector<int> idx(n, 0);
  for (;;) {
    all.push_back(idx);
    int ax = n - 1;
    while (ax >= 0) {
      if (++idx[ax] < static_cast<int>(breakpoints[ax].size()) - 1) break;
      idx[ax] = 0;
      --ax;
    }
    if (ax < 0) break;
  }
  auto cell_box = [&](const std::vector<int>& mi) {
    Vec lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
      lo[i] = breakpoints[i][mi[i]];
      hi[i] = breakpoints[i][mi[i] + 1];
    }
    return Box(lo, hi);
  };
  // The first cell (in enumeration order) containing the origin becomes index 0.
  std::size_t origin_pos = 0;
  for (std::size_t k = 0; k < all.size(); ++k) {
    if (cell_box(all[k]).contains(Vec::Zero(n))) {
      origin_pos = k;
      break;
    }
  }
  std::rotate(all.begin(), all.begin() + static_cast<long>(origin_pos), all.begin() + static_cast<long>(origin_pos) + 1);

  Partition part;
  part.domain = domain;
  part.breakpoints = breakpoints;
  for (std::size_t k = 0; k < all.size(); ++k) {
    part.cells.push_back(Polytope::from_box(cell_box(all[k]), static_cast<int>(k)));
    part.grid_index.push_back(all[k]);
  }
  return part;
}

inline Partition make_grid_partition(const Box& domain, const std::vector<int>& counts) {
  const int n = domain.dim();
  if (static_cast<int>(counts.size()) != n) throw ConfigError("one cell count per axis required");
  std::vector<std::vector<double>> bps(n);
  for (int i = 0; i < n; ++i) {
    if (counts[i] < 1) throw ConfigError("cell counts must be >= 1");
    for (int k = 0; k <= counts[i]; ++k)
      bps[i].push_back(k == counts[i] ? domain.hi[i] : domain.lo[i] + (domain.hi[i] - domain.lo[i]) * k / counts[i]);
  }
  return make_grid_partition(domain, bps);
}

struct Location {
  int sigma = -1;
  bool clamped = false;
};

// Lowest-index cell containing x (after clamping to the domain).
inline Location locate(const Partition& part, const Vec& x) {
  Location loc;
  Vec q = x;
  if (!part.domain.contains(x)) {
    q = part.domain.clamp(x);
    loc.clamped = true;
  }
  const double tol = part.tol();
  for (const auto& cell : part.cells) {
    if (cell.contains(q, tol)) {
      loc.sigma = cell.index;
      return loc;
    }
  }
  throw ConsistencyError("locate: no cell contains the query point");
}

// ---------------------------------------------------------------------------
// Continuity stitching (2-D grids)

struct StitchResult {
  Partition partition;
  std::vector<AffineModel> models;
  // Original cells overlapping each augmented piece (a single entry for shrunk cells).
  std::vector<std::vector<int>> sources;
  std::size_t original_count = 0;
  double margin = 0.0;
};

inline double default_margin(const Partition& part, double fraction = 0.05) {
  double smallest = std::numeric_limits<double>::infinity();
  for (const auto& b : part.breakpoints)
    for (std::size_t k = 1; k < b.size(); ++k) smallest = std::min(smallest, b[k] - b[k - 1]);
  return fraction * smallest;
}

// Shrinks every grid cell by `width` along its interior facets and fills the
// resulting bands and corner squares with triangles. Each triangle vertex is a
// corner of exactly one shrunk cell and takes that cell's drift value, so the
// linear interpolation on the triangle agrees with the cell models on every
// shared edge. The input matrix on a triangle is the mean of its vertex owners'.
inline StitchResult stitch_margins_2d(const Partition& part, const std::vector<AffineModel>& models, double width) {
  if (part.dim() != 2) throw UnsupportedError("margin stitching is implemented for 2-D partitions only");
  if (!part.is_grid()) throw UnsupportedError("margin stitching requires a grid-generated partition");
  if (models.size() != part.size()) throw ConfigError("one model per cell required");
  const auto& bx = part.breakpoints[0];
  const auto& by = part.breakpoints[1];
  const int K = static_cast<int>(bx.size()) - 1, L = static_cast<int>(by.size()) - 1;
  double smallest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < K; ++i) smallest = std::min(smallest, bx[i + 1] - bx[i]);
  for (int j = 0; j < L; ++j) smallest = std::min(smallest, by[j + 1] - by[j]);
  if (!(width > 0.0) || width > 0.5 * smallest) throw ConfigError("margin width must lie in (0, half the smallest cell]");

  std::map<std::pair<int, int>, int> cell_of;
  for (std::size_t c = 0; c < part.size(); ++c) cell_of[{part.grid_index[c][0], part.grid_index[c][1]}] = static_cast<int>(c);
  auto xl = [&](int i) { return bx[i] + (i > 0 ? width : 0.0); };
  auto xr = [&](int i) { return bx[i + 1] - (i < K - 1 ? width : 0.0); };
  auto yl = [&](int j) { return by[j] + (j > 0 ? width : 0.0); };
  auto yr = [&](int j) { return by[j + 1] - (j < L - 1 ? width : 0.0); };
  auto pt = [](double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
  };

  StitchResult out;
  out.original_count = part.size();
  out.margin = width;
  out.partition.domain = part.domain;
  for (std::size_t c = 0; c < part.size(); ++c) {
    const int i = part.grid_index[c][0], j = part.grid_index[c][1];
    Box shrunk(pt(xl(i), yl(j)), pt(xr(i), yr(j)));
    out.partition.cells.push_back(Polytope::from_box(shrunk, static_cast<int>(c)));
    out.models.push_back(models[c]);
    out.sources.push_back({static_cast<int>(c)});
  }

  struct Corner {
    Vec p;
    int owner;
  };
  auto add_triangle = [&](const Corner& a, const Corner& b, const Corner& c, const std::vector<int>& src) {
    const Corner* cs[3] = {&a, &b, &c};
    Eigen::Matrix3d M;
    for (int k = 0; k < 3; ++k) M.row(k) << cs[k]->p[0], cs[k]->p[1], 1.0;
    const auto& m0 = models[a.owner];
    const auto n = m0.C.size();
    Mat values(3, n);
    Mat Bsum = Mat::Zero(m0.B.rows(), m0.B.cols());
    for (int k = 0; k < 3; ++k) {
      const auto& mk = models[cs[k]->owner];
      values.row(k) = (mk.A * cs[k]->p + mk.C).transpose();
      Bsum += mk.B;
    }
    Mat coeffs = M.fullPivLu().solve(values);  // rows: d/dx1, d/dx2, offset
    AffineModel tri;
    tri.A = coeffs.topRows(2).transpose();
    tri.C = coeffs.row(2).transpose();
    tri.B = Bsum / 3.0;
    // Orient counter-clockwise.
    Vec e1 = b.p - a.p, e2 = c.p - a.p;
    std::vector<Vec> verts{a.p, b.p, c.p};
    if (e1[0] * e2[1] - e1[1] * e2[0] < 0) std::swap(verts[1], verts[2]);
    const int idx = static_cast<int>(out.partition.cells.size());
    out.partition.cells.push_back(Polytope::from_polygon(verts, idx));
    out.models.push_back(std::move(tri));
    out.sources.push_back(src);
  };
  auto split_rect = [&](const Corner& c00, const Corner& c10, const Corner& c11, const Corner& c01) {
    std::set<int> s{c00.owner, c10.owner, c11.owner, c01.owner};
    std::vector<int> src(s.begin(), s.end());
    add_triangle(c00, c10, c11, src);
    add_triangle(c00, c11, c01, src);
  };

  // Bands across vertical facets x = bx[i+1].
  for (int i = 0; i + 1 < K; ++i) {
    for (int j = 0; j < L; ++j) {
      const int left = cell_of.at({i, j}), right = cell_of.at({i + 1, j});
      const double xa = bx[i + 1] - width, xb = bx[i + 1] + width;
      split_rect({pt(xa, yl(j)), left}, {pt(xb, yl(j)), right}, {pt(xb, yr(j)), right}, {pt(xa, yr(j)), left});
    }
  }
  // Bands across horizontal facets y = by[j+1].
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j + 1 < L; ++j) {
      const int low = cell_of.at({i, j}), up = cell_of.at({i, j + 1});
      const double ya = by[j + 1] - width, yb = by[j + 1] + width;
      split_rect({pt(xl(i), ya), low}, {pt(xr(i), ya), low}, {pt(xr(i), yb), up}, {pt(xl(i), yb), up});
    }
  }
  // Squares around interior grid vertices.
  for (int i = 0; i + 1 < K; ++i) {
    for (int j = 0; j + 1 < L; ++j) {
      const double cx = bx[i + 1], cy = by[j + 1];
      split_rect({pt(cx - width, cy - width), cell_of.at({i, j})}, {pt(cx + width, cy - width), cell_of.at({i + 1, j})},
                 {pt(cx + width, cy + width), cell_of.at({i + 1, j + 1})},
                 {pt(cx - width, cy + width), cell_of.at({i, j + 1})});
    }
  }
  return out;
}

struct JumpStats {
  double drift = 0.0;  // max jump of A x + C across facets
  double input = 0.0;  // max jump of the input matrix across facets
};

// Probes every facet of every 2-D piece and measures the spread of the models
// of all pieces containing the probe point.
inline JumpStats facet_jumps(const Partition& part, const std::vector<AffineModel>& models, int probes_per_facet = 11) {
  if (part.dim() != 2) throw UnsupportedError("facet probing is implemented for 2-D partitions only");
  JumpStats stats;
  const double tol = 1e-7 * std::max(1.0, part.domain.extent());
  for (const auto& cell : part.cells) {
    auto verts = cell.vertices();
    for (std::size_t e = 0; e < verts.size(); ++e) {
      const Vec& a = verts[e];
      const Vec& b = verts[(e + 1) % verts.size()];
      for (int s = 0; s < probes_per_facet; ++s) {
        const double t = (s + 0.5) / probes_per_facet;
        Vec x = a + t * (b - a);
        if (!part.domain.contains(x, tol)) continue;
        std::vector<int> hits;
        for (const auto& other : part.cells)
          if (other.contains(x, tol)) hits.push_back(other.index);
        for (std::size_t p = 0; p < hits.size(); ++p) {
          for (std::size_t q = p + 1; q < hits.size(); ++q) {
            const auto& mp = models[hits[p]];
            const auto& mq = models[hits[q]];
            stats.drift = std::max(stats.drift, ((mp.A - mq.A) * x + mp.C - mq.C).cwiseAbs().maxCoeff());
            stats.input = std::max(stats.input, (mp.B - mq.B).cwiseAbs().maxCoeff());
          }
        }
      }
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json polytope_to_json(const Polytope& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < p.Z.rows(); ++r) {
    std::vector<double> row(p.Z.cols());
    for (Eigen::Index c = 0; c < p.Z.cols(); ++c) row[c] = p.Z(r, c);
    rows.push_back(row);
  }
  return {{"index", p.index}, {"Z", rows}, {"z", std::vector<double>(p.z.data(), p.z.data() + p.z.size())}};
}

inline Polytope polytope_from_json(const nlohmann::json& j) {
  Polytope p;
  p.index = j.at("index").get<int>();
  const auto rows = j.at("Z").get<std::vector<std::vector<double>>>();
  const auto z = j.at("z").get<std::vector<double>>();
  if (rows.size() != z.size() || rows.empty()) throw ValidationError("polytope: Z and z sizes differ");
  p.Z = Mat(rows.size(), rows.front().size());
  p.z = Vec(z.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) throw ValidationError("polytope: ragged Z");
    for (std::size_t c = 0; c < rows[r].size(); ++c) p.Z(r, c) = rows[r][c];
    p.z[r] = z[r];
  }
  return p;
}

inline nlohmann::json to_json(const Partition& part) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : part.cells) cells.push_back(polytope_to_json(c));
  nlohmann::json j = {{"domain_lo", std::vector<double>(part.domain.lo.data(), part.domain.lo.data() + part.dim())},
                      {"domain_hi", std::vector<double>(part.domain.hi.data(), part.domain.hi.data() + part.dim())},
                      {"cells", cells}};
  if (part.is_grid()) {
    j["breakpoints"] = part.breakpoints;
    j["grid_index"] = part.grid_index;
  }
  return j;
}

inline Partition partition_from_json(const nlohmann::json& j) {
  Partition part;
  const auto lo = j.at("domain_lo").get<std::vector<double>>();
  const auto hi = j.at("domain_hi").get<std::vector<double>>();
  part.domain = Box(Eigen::Map<const Vec>(lo.data(), lo.size()), Eigen::Map<const Vec>(hi.data(), hi.size()));
  for (const auto& c : j.at("cells")) part.cells.push_back(polytope_from_json(c));
  for (std::size_t k = 0; k < part.cells.size(); ++k)
    if (part.cells[k].index != static_cast<int>(k)) throw ValidationError("partition: cell indices must be 0..N-1 in order");
  if (j.contains("breakpoints")) {
    part.breakpoints = j.at("breakpoints").get<std::vector<std::vector<double>>>();
    part.grid_index = j.at("grid_index").get<std::vector<std::vector<int>>>();
  }
  return part;
}

}  // namespace pwlc::partition
