#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mmrd/types.hpp"

namespace mmrd {

/// Uniform lattice anchored so the focal point is exactly a node.  Nodes are
/// c + h * j for integer multi-indices j in [lo, hi] (inclusive, per axis).
struct Grid {
  int dim = 1;
  double h = 0;
  Vec c;
  IntVec lo, hi;

  Eigen::Index axis_size(int a) const { return hi[a] - lo[a] + 1; }
  Eigen::Index size() const {
    Eigen::Index s = 1;
    for (int a = 0; a < dim; ++a) s *= axis_size(a);
    return s;
  }
  /// Row-major linearization of the multi-index.
  Eigen::Index linear(const IntVec& j) const {
    Eigen::Index idx = 0;
    for (int a = 0; a < dim; ++a) idx = idx * axis_size(a) + (j[a] - lo[a]);
    return idx;
  }
  IntVec multi(Eigen::Index lin) const {
    IntVec j(dim);
    for (int a = dim - 1; a >= 0; --a) {
      j[a] = static_cast<int>(lin % axis_size(a)) + lo[a];
      lin /= axis_size(a);
    }
    return j;
  }
  Vec point(Eigen::Index lin) const {
    IntVec j = multi(lin);
    Vec p(dim);
    for (int a = 0; a < dim; ++a) p[a] = c[a] + h * j[a];
    return p;
  }
  bool contains(const IntVec& j) const {
    for (int a = 0; a < dim; ++a)
      if (j[a] < lo[a] || j[a] > hi[a]) return false;
    return true;
  }

  /// Nearest node to x.  Half-cell ties resolve toward the lexicographically
  /// smallest nearest node, i.e. per axis toward the smaller coordinate.
  Eigen::Index nearest(const Eigen::Ref<const Vec>& x) const {
    IntVec j(dim);
    for (int a = 0; a < dim; ++a) {
      const double u = (x[a] - c[a]) / h;
      int ja = static_cast<int>(std::ceil(u - 0.5));
      j[a] = std::clamp(ja, lo[a], hi[a]);
    }
    return linear(j);
  }

  /// One node of the multilinear stencil for an (often off-lattice) point.
  struct StencilNode {
    Eigen::Index index;
    double weight;
  };

  /// Cell containing x: per axis the lower corner index and the fractional
  /// position theta in [0, 1].  Points outside the lattice clamp to the
  /// boundary cell.
  void cell(const Eigen::Ref<const Vec>& x, IntVec* base, Vec* theta) const {
    base->resize(dim);
    theta->resize(dim);
    for (int a = 0; a < dim; ++a) {
      const double u = (x[a] - c[a]) / h;
      int j0 = static_cast<int>(std::floor(u));
      j0 = std::clamp(j0, lo[a], hi[a] - 1);
      (*base)[a] = j0;
      (*theta)[a] = std::clamp(u - j0, 0.0, 1.0);
    }
  }

  /// Multilinear interpolation stencil at x: the corners of the cell
  /// containing x with tensor-product weights (nonnegative, summing to one).
  /// Exact on nodes, where the stencil collapses to the node itself.
  /// Evaluating candidate functions through this stencil instead of the
  /// nearest node keeps the evaluation error at O(h^2), the same order as
  /// the curvature constraints.
  std::vector<StencilNode> stencil(const Eigen::Ref<const Vec>& x) const {
    IntVec base;
    Vec theta;
    cell(x, &base, &theta);
    std::vector<StencilNode> out;
    IntVec j(dim);
    for (int mask = 0; mask < (1 << dim); ++mask) {
      double w = 1;
      for (int a = 0; a < dim; ++a) {
        const bool up = (mask >> a) & 1;
        w *= up ? theta[a] : 1.0 - theta[a];
        j[a] = base[a] + (up ? 1 : 0);
      }
      if (w > 0) out.push_back({linear(j), w});
    }
    return out;
  }

  /// Certified bound on the multilinear interpolation error at x, per unit of
  /// curvature: for any f with second directional derivatives along the axes
  /// bounded by kappa, |f(x) - stencil interpolant of f at x| is at most
  /// kappa * interp_slack(x).  Per axis the linear-interpolation error on one
  /// cell is at most kappa * theta (1 - theta) h^2 / 2; the tensor product
  /// adds the axes.  Zero exactly on nodes.
  double interp_slack(const Eigen::Ref<const Vec>& x) const {
    IntVec base;
    Vec theta;
    cell(x, &base, &theta);
    double s = 0;
    for (int a = 0; a < dim; ++a) s += 0.5 * theta[a] * (1.0 - theta[a]) * h * h;
    return s;
  }

  Eigen::Index focal_index() const { return linear(IntVec::Zero(dim)); }
  /// Indices of the nodes c + h e_a, one per axis.
  std::vector<Eigen::Index> focal_offset_indices() const {
    std::vector<Eigen::Index> out;
    for (int a = 0; a < dim; ++a) {
      IntVec j = IntVec::Zero(dim);
      j[a] = 1;
      out.push_back(linear(j));
    }
    return out;
  }
};

/// Default edge length: 1/100 of the data range for one running variable,
/// 1/40 of the widest axis range for two (the lattice is isotropic so that
/// every module shares the same ||h v||^2 curvature scaling).
inline double default_grid_spacing(const Mat& x, int dim) {
  double range = 0;
  for (int a = 0; a < dim; ++a)
    range = std::max(range, x.col(a).maxCoeff() - x.col(a).minCoeff());
  if (!(range > 0)) fail_design("running variable has zero range; cannot build a grid");
  return dim == 1 ? range / 100.0 : range / 40.0;
}

/// Builds the lattice covering the data's bounding box padded by one cell on
/// each side; the nodes c +/- h e_a are force-included so the anchor
/// constraints always have somewhere to live.
inline Grid build_lattice(const Mat& x, const Vec& c, double h,
                          Eigen::Index max_points = 200000) {
  const int dim = static_cast<int>(c.size());
  if (!(h > 0) || !std::isfinite(h)) fail_design("grid spacing must be positive and finite");
  Grid g;
  g.dim = dim;
  g.h = h;
  g.c = c;
  g.lo.resize(dim);
  g.hi.resize(dim);
  double points = 1;
  for (int a = 0; a < dim; ++a) {
    const double mn = x.col(a).minCoeff(), mx = x.col(a).maxCoeff();
    int jmin = static_cast<int>(std::floor((mn - c[a]) / h)) - 1;
    int jmax = static_cast<int>(std::ceil((mx - c[a]) / h)) + 1;
    g.lo[a] = std::min(jmin, -1);
    g.hi[a] = std::max(jmax, 1);
    points *= static_cast<double>(g.hi[a] - g.lo[a] + 1);
  }
  if (points > static_cast<double>(max_points))
    fail_design("grid would need " + std::to_string(static_cast<long long>(points)) +
                " nodes (cap " + std::to_string(max_points) +
                "); increase the grid spacing");
  return g;
}

/// Lattice directions along which discrete second differences are bounded.
struct DirectionSet {
  std::vector<IntVec> v;
};

enum class DirectionChoice { Coarse, Fine };

inline const char* to_string(DirectionChoice c) {
  return c == DirectionChoice::Coarse ? "coarse" : "fine";
}

inline DirectionSet direction_set(int dim, DirectionChoice choice) {
  DirectionSet d;
  auto add = [&](int a, int b) {
    IntVec v(2);
    v << a, b;
    d.v.push_back(v);
  };
  if (dim == 1) {
    IntVec v(1);
    v << 1;
    d.v.push_back(v);
    return d;
  }
  if (dim != 2) fail_design("direction sets are defined for 1 or 2 running variables");
  add(1, 0);
  add(0, 1);
  add(1, 1);
  add(1, -1);
  if (choice == DirectionChoice::Fine) {
    add(5, 2);
    add(2, 5);
    add(5, -2);
    add(2, -5);
  }
  return d;
}

/// Worst-case relative curvature slack of a direction set:
///   alpha^2(V) = sup_{|u|=1} inf_{v in V} (1 - (u.v)^2 / |v|^2),
/// i.e. sin^2 of half the largest angular gap between the lines spanned by V.
/// Zero for one running variable (the only direction is exact).
inline double alpha_squared(const DirectionSet& dirs, int dim) {
  if (dim == 1) return 0.0;
  if (dirs.v.empty()) fail_design("direction set is empty");
  std::vector<double> ang;
  for (const auto& v : dirs.v) {
    double a = std::atan2(static_cast<double>(v[1]), static_cast<double>(v[0]));
    const double pi = std::acos(-1.0);
    while (a < 0) a += pi;  // lines, not rays: angles mod pi
    while (a >= pi) a -= pi;
    ang.push_back(a);
  }
  std::sort(ang.begin(), ang.end());
  const double pi = std::acos(-1.0);
  double max_gap = ang.front() + pi - ang.back();
  for (std::size_t i = 1; i < ang.size(); ++i)
    max_gap = std::max(max_gap, ang[i] - ang[i - 1]);
  const double s = std::sin(max_gap / 2.0);
  return s * s;
}

/// One discrete curvature constraint: |f(plus) + f(minus) - 2 f(center)| is
/// bounded by (curvature bound) * hv_norm_sq, hv_norm_sq = ||h v||^2.
struct CurvatureRow {
  Eigen::Index minus, center, plus;
  double hv_norm_sq;
};

/// Emits one row per (node, direction) pair whose both neighbors lie on the
/// lattice, in deterministic (direction-major, node-minor) order.
inline std::vector<CurvatureRow> curvature_rows(const Grid& g, const DirectionSet& dirs) {
  std::vector<CurvatureRow> rows;
  const Eigen::Index n = g.size();
  for (const auto& v : dirs.v) {
    double vnorm2 = 0;
    for (int a = 0; a < g.dim; ++a) vnorm2 += static_cast<double>(v[a]) * v[a];
    const double hv2 = g.h * g.h * vnorm2;
    for (Eigen::Index lin = 0; lin < n; ++lin) {
      IntVec j = g.multi(lin);
      IntVec jp = j + v, jm = j - v;
      if (!g.contains(jp) || !g.contains(jm)) continue;
      rows.push_back({g.linear(jm), lin, g.linear(jp), hv2});
    }
  }
  return rows;
}

}  // namespace mmrd
