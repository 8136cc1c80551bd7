#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mmrd/grid.hpp"
#include "mmrd/qp.hpp"
#include "mmrd/types.hpp"

namespace mmrd {

/// Worst-case conditional bias of a weight vector over the bounded-curvature
/// function class.  value is +infinity exactly when some moment constraint
/// whose violation lets the adversary scale the bias without limit fails.
struct BiasEvaluation {
  double value = 0.0;
  bool feasible = true;
  std::string violated;  ///< human-readable name of the first failed moment
};

namespace detail {

/// Residuals of the level/slope moments that keep the adversary's affine
/// nuisance directions out of the bias.  Tolerances are relative to the
/// weight mass so that solver output at ~1e-8 accuracy passes cleanly.
inline bool moments_hold(const Mat& x, const IntVec& w, const Vec& gamma, const Vec& c,
                         Estimand estimand, std::string* violated, double rel_tol = 1e-7) {
  const Eigen::Index n = gamma.size();
  const int dim = static_cast<int>(c.size());
  const double mass = std::max(1.0, gamma.cwiseAbs().sum());
  auto check = [&](double resid, double scale, const std::string& name) {
    if (std::abs(resid) > rel_tol * std::max(1.0, scale)) {
      if (violated && violated->empty()) *violated = name;
      return false;
    }
    return true;
  };
  bool ok = true;
  if (estimand == Estimand::PointwiseCate) {
    double s1 = 0, s0 = 0;
    for (Eigen::Index i = 0; i < n; ++i) (w[i] ? s1 : s0) += gamma[i];
    ok &= check(s1 - 1.0, mass, "sum_{treated} gamma = 1");
    ok &= check(s0 + 1.0, mass, "sum_{control} gamma = -1");
    for (int a = 0; a < dim; ++a) {
      double m1 = 0, m0 = 0, sc = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = x(i, a) - c[a];
        (w[i] ? m1 : m0) += gamma[i] * d;
        sc += std::abs(gamma[i] * d);
      }
      ok &= check(m1, sc, "sum_{treated} gamma (x - c) = 0 [axis " + std::to_string(a + 1) + "]");
      ok &= check(m0, sc, "sum_{control} gamma (x - c) = 0 [axis " + std::to_string(a + 1) + "]");
    }
  } else {
    ok &= check(gamma.sum(), mass, "sum gamma = 0");
    for (int a = 0; a < dim; ++a) {
      double mo = 0, sc = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = x(i, a) - c[a];
        mo += gamma[i] * d;
        sc += std::abs(gamma[i] * d);
      }
      ok &= check(mo, sc, "sum gamma (x - c) = 0 [axis " + std::to_string(a + 1) + "]");
    }
  }
  return ok;
}

/// Exact integral of |K| for one group on one side of the focal point.
/// K(t) = sum_{x_i >= t >= c} g_i (x_i - t) for the right side (mirrored on
/// the left); piecewise linear between the distinct support points, so each
/// segment integrates exactly after splitting at its sign change.
inline double abs_kernel_integral_one_side(std::vector<std::pair<double, double>>& pts /*(d, g), d>0*/) {
  if (pts.empty()) return 0.0;
  std::sort(pts.begin(), pts.end());
  // Breakpoints ascending: 0, d_1, ..., d_R (distinct).
  std::vector<double> bp{0.0};
  for (const auto& p : pts)
    if (bp.back() != p.first) bp.push_back(p.first);
  const std::size_t nb = bp.size();
  // K at each breakpoint via suffix sums over points strictly beyond it.
  std::vector<double> K(nb, 0.0);
  double sg = 0, sgd = 0;
  std::size_t pi = pts.size();
  for (std::size_t b = nb; b-- > 0;) {
    while (pi > 0 && pts[pi - 1].first > bp[b]) {
      --pi;
      sg += pts[pi].second;
      sgd += pts[pi].second * pts[pi].first;
    }
    K[b] = sgd - bp[b] * sg;  // points at bp[b] itself contribute zero here
  }
  double integral = 0;
  for (std::size_t b = 0; b + 1 < nb; ++b) {
    const double a = bp[b], bb = bp[b + 1];
    const double Ka = K[b], Kb = K[b + 1];
    if (Ka == 0.0 && Kb == 0.0) continue;
    if (Ka * Kb >= 0) {
      integral += 0.5 * (std::abs(Ka) + std::abs(Kb)) * (bb - a);
    } else {
      const double xi = a + (bb - a) * std::abs(Ka) / (std::abs(Ka) + std::abs(Kb));
      integral += 0.5 * (std::abs(Ka) * (xi - a) + std::abs(Kb) * (bb - xi));
    }
  }
  return integral;
}

}  // namespace detail

/// Exact worst-case bias for one running variable: B times the integral of
/// |K| where K is the second-derivative influence kernel of the weights,
/// accumulated per curvature class (two classes for the pointwise estimand,
/// one spanning all observations for the weighted one).
inline BiasEvaluation univariate_worst_case_bias(const Mat& x, const IntVec& w, const Vec& gamma,
                                                 const Vec& c, Estimand estimand, double B) {
  if (x.cols() != 1) fail_design("the exact bias oracle handles one running variable only");
  if (x.rows() != gamma.size() || w.size() != gamma.size())
    fail_design("bias oracle inputs have inconsistent lengths");
  if (!(B >= 0)) fail_design("curvature bound must be nonnegative");
  BiasEvaluation out;
  if (!detail::moments_hold(x, w, gamma, c, estimand, &out.violated)) {
    out.feasible = false;
    out.value = kInf;
    return out;
  }
  if (B == 0.0) return out;

  const int groups = estimand == Estimand::PointwiseCate ? 2 : 1;
  double total = 0;
  for (int g = 0; g < groups; ++g) {
    std::vector<std::pair<double, double>> right, left;
    for (Eigen::Index i = 0; i < gamma.size(); ++i) {
      if (groups == 2 && w[i] != g) continue;
      const double d = x(i, 0) - c[0];
      if (d > 0)
        right.emplace_back(d, gamma[i]);
      else if (d < 0)
        left.emplace_back(-d, gamma[i]);
      // points exactly at the focal point contribute no curvature bias
    }
    total += detail::abs_kernel_integral_one_side(right);
    total += detail::abs_kernel_integral_one_side(left);
  }
  out.value = B * total;
  return out;
}

/// Discretized worst-case bias: the adversary maximizes sum_i gamma_i f(x_i)
/// over anchored grid functions (one per curvature class) whose second
/// differences along the direction set are bounded by B ||h v||^2, with f
/// evaluated off the lattice by multilinear interpolation.  Solved as a
/// linear program; a certified allowance for the interpolation error is added
/// so the reported value also upper bounds the continuum worst case.
inline BiasEvaluation grid_worst_case_bias(const Mat& x, const IntVec& w, const Vec& gamma,
                                           const Vec& c, Estimand estimand, double B,
                                           const Grid& grid, const DirectionSet& dirs,
                                           const SolverSettings& settings = {}) {
  if (x.rows() != gamma.size() || w.size() != gamma.size())
    fail_design("bias oracle inputs have inconsistent lengths");
  if (x.cols() != grid.dim || c.size() != grid.dim)
    fail_design("grid dimension does not match the data");
  if (!(B >= 0)) fail_design("curvature bound must be nonnegative");
  BiasEvaluation out;
  if (!detail::moments_hold(x, w, gamma, c, estimand, &out.violated)) {
    out.feasible = false;
    out.value = kInf;
    return out;
  }
  if (B == 0.0) return out;  // anchored flat class: only the zero function remains

  const int blocks = estimand == Estimand::PointwiseCate ? 2 : 1;
  const Eigen::Index m = grid.size();
  const Eigen::Index nvar = blocks * m;

  // Objective: maximize phi' F  ==  minimize -phi' F.
  Vec phi = Vec::Zero(nvar);
  for (Eigen::Index i = 0; i < gamma.size(); ++i) {
    const int b = blocks == 2 ? w[i] : 0;
    for (const auto& sn : grid.stencil(x.row(i).transpose()))
      phi[b * m + sn.index] += gamma[i] * sn.weight;
  }

  const auto rows = curvature_rows(grid, dirs);
  const Eigen::Index focal = grid.focal_index();
  const auto offsets = grid.focal_offset_indices();
  const Eigen::Index n_anchor = 1 + static_cast<Eigen::Index>(offsets.size());
  const Eigen::Index n_rows = blocks * (static_cast<Eigen::Index>(rows.size()) + n_anchor);

  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(blocks) * (rows.size() * 3 + 2));
  Vec l(n_rows), u(n_rows);
  Eigen::Index r = 0;
  for (int b = 0; b < blocks; ++b) {
    const Eigen::Index off = b * m;
    for (const auto& cr : rows) {
      t.emplace_back(static_cast<int>(r), static_cast<int>(off + cr.minus), 1.0);
      t.emplace_back(static_cast<int>(r), static_cast<int>(off + cr.plus), 1.0);
      t.emplace_back(static_cast<int>(r), static_cast<int>(off + cr.center), -2.0);
      l[r] = -B * cr.hv_norm_sq;
      u[r] = B * cr.hv_norm_sq;
      ++r;
    }
    t.emplace_back(static_cast<int>(r), static_cast<int>(off + focal), 1.0);
    l[r] = u[r] = 0.0;
    ++r;
    for (Eigen::Index o : offsets) {
      t.emplace_back(static_cast<int>(r), static_cast<int>(off + o), 1.0);
      l[r] = u[r] = 0.0;
      ++r;
    }
  }

  QuadraticProgram lp;
  lp.q = -phi;
  lp.A = SpMat(n_rows, nvar);
  lp.A.setFromTriplets(t.begin(), t.end());
  lp.l = l;
  lp.u = u;

  // The optimal face is hugely degenerate (the adversary is free wherever no
  // weight mass lands), which makes the plain linear program chatter.  A tiny
  // ridge selects the minimum-norm maximizer and can only lower the reported
  // value, by at most ridge * |F|^2; shrink it until that perturbation is
  // negligible, growing it instead if the solve itself will not settle.
  double ridge = 1e-5 * std::max(1.0, phi.cwiseAbs().maxCoeff());
  bool have_value = false;
  SolverSettings local = settings;
  local.max_iterations = std::min<long>(settings.max_iterations, 60000);
  for (int attempt = 0; attempt < 4; ++attempt) {
    SpMat P(nvar, nvar);
    P.setIdentity();
    lp.P = 2.0 * ridge * P;
    SolveResult res = solve_qp(lp, local);
    if (res.status != SolveStatus::Optimal) {
      if (have_value) break;  // keep the last converged value; its error bound held
      ridge *= 100.0;
      continue;
    }
    out.value = std::max(0.0, phi.dot(res.x));
    have_value = true;
    if (ridge * res.x.squaredNorm() <= 1e-3 * std::max(1.0, out.value)) break;
    ridge /= 100.0;
    // Anything past the first converged value is opportunistic refinement.
    local.max_iterations = std::min<long>(local.max_iterations, 20000);
  }
  if (!have_value)
    fail_solver("grid bias oracle did not reach optimality");
  // Interpolation understates a curvature-B function by up to B * interp_slack
  // at each off-lattice point; the allowance restores the upper bound.
  double slack = 0;
  for (Eigen::Index i = 0; i < gamma.size(); ++i)
    slack += std::abs(gamma[i]) * grid.interp_slack(x.row(i).transpose());
  out.value += B * slack;
  return out;
}

}  // namespace mmrd
