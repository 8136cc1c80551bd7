#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmrd/bias.hpp"
#include "mmrd/grid.hpp"
#include "mmrd/qp.hpp"
#include "mmrd/types.hpp"

namespace mmrd {

/// Everything the weight optimizer needs about one problem instance.
struct WeightInputs {
  Mat x;        // n x dim
  IntVec w;     // n
  Vec sigma_sq; // n, > 0
  Vec c;        // dim
  Estimand estimand = Estimand::PointwiseCate;
  double B = 0;          ///< curvature bound (outcome units per |x|^2)
  double lambda_ci = 1;  ///< weight on squared bias in the objective
  Mat balance;           ///< n x p covariates forced to zero weighted sum (may be 0 x 0)

  Eigen::Index rows() const { return w.size(); }
  int dim() const { return static_cast<int>(c.size()); }
};

namespace detail {

/// Rows of the exact moment system M gamma = b for the estimand (plus any
/// balance covariates), with printable names.
inline void moment_system(const WeightInputs& in, Mat* M, Vec* b,
                          std::vector<std::string>* names) {
  const Eigen::Index n = in.rows();
  const int dim = in.dim();
  const int psi = arm_split(in.estimand);
  const Eigen::Index p = in.balance.cols();
  const Eigen::Index rows = 2 + dim + psi * dim + p;
  M->setZero(rows, n);
  b->setZero(rows);
  names->clear();
  for (Eigen::Index i = 0; i < n; ++i) {
    (*M)(0, i) = in.w[i];
    (*M)(1, i) = 1.0 - in.w[i];
    for (int a = 0; a < dim; ++a) {
      (*M)(2 + a, i) = in.x(i, a) - in.c[a];
      if (psi) (*M)(2 + dim + a, i) = (2.0 * in.w[i] - 1.0) * (in.x(i, a) - in.c[a]);
    }
    for (Eigen::Index j = 0; j < p; ++j) (*M)(2 + dim + psi * dim + j, i) = in.balance(i, j);
  }
  (*b)[0] = 1.0;
  (*b)[1] = -1.0;
  names->push_back("sum_{treated} gamma = 1");
  names->push_back("sum_{control} gamma = -1");
  for (int a = 0; a < dim; ++a)
    names->push_back("sum gamma (x - c) = 0 [axis " + std::to_string(a + 1) + "]");
  if (psi)
    for (int a = 0; a < dim; ++a)
      names->push_back("sum (2w - 1) gamma (x - c) = 0 [axis " + std::to_string(a + 1) + "]");
  for (Eigen::Index j = 0; j < p; ++j)
    names->push_back("sum gamma z = 0 [covariate " + std::to_string(j + 1) + "]");
}

/// Raises a clean infeasibility error when the moment system has no solution.
/// Balance columns are admitted one at a time so the binding covariate can be
/// named.
inline void require_feasible(const WeightInputs& in) {
  const int psi = arm_split(in.estimand);
  // Friendly special case: an arm whose support is a single point away from
  // the focal point cannot carry unit mass and zero first moment at once.
  if (psi) {
    for (int arm = 0; arm <= 1; ++arm) {
      std::set<std::vector<double>> support;
      for (Eigen::Index i = 0; i < in.rows(); ++i)
        if (in.w[i] == arm)
          support.insert(std::vector<double>(in.x.row(i).begin(), in.x.row(i).end()));
      if (support.empty())
        fail_infeasible(std::string("the ") + (arm ? "treated" : "control") +
                        " arm is empty: sum_{" + (arm ? "treated" : "control") +
                        "} gamma = " + (arm ? "1" : "-1") + " cannot hold");
      if (support.size() == 1) {
        Vec pt = Eigen::Map<const Vec>(support.begin()->data(), in.dim());
        if ((pt - in.c).norm() > 0)
          fail_infeasible(std::string("the ") + (arm ? "treated" : "control") +
                          " arm has a single support point away from the focal point: "
                          "unit mass and sum_{arm} gamma (x - c) = 0 are incompatible");
      }
    }
  }
  Mat M;
  Vec b;
  std::vector<std::string> names;
  moment_system(in, &M, &b, &names);
  const Eigen::Index base = 2 + in.dim() + psi * in.dim();
  auto feasible_upto = [&](Eigen::Index rows) {
    Mat Mh = M.topRows(rows);
    Vec bh = b.head(rows);
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(Mh);
    Vec g = cod.solve(bh);
    return (Mh * g - bh).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + bh.cwiseAbs().maxCoeff());
  };
  if (!feasible_upto(base))
    fail_infeasible("the moment system for this estimand has no solution on the retained "
                    "support (" + names[0] + ", ..., " + names[base - 1] + ")");
  for (Eigen::Index j = 0; j < in.balance.cols(); ++j)
    if (!feasible_upto(base + j + 1))
      fail_infeasible("balance constraint is infeasible at " + names[base + j] +
                      " given the moment constraints");
}

}  // namespace detail

/// Built dual program plus the layout needed to read a solution back.
struct DualProgram {
  QuadraticProgram qp;
  WeightInputs in;
  Grid grid;
  DirectionSet dirs;
  /// Per observation: the interpolation stencil used to evaluate candidate
  /// functions at x_i.
  std::vector<std::vector<Grid::StencilNode>> stencil;
  bool curved = false;          ///< B > 0 (grid variables present)
  Eigen::Index m = 0;           ///< grid size
  int blocks = 1;               ///< curvature classes
  Eigen::Index off_lambda = 0;  ///< index of lambda1; lambda2..: consecutive
};

/// Dual of the minimax weight program on the discretized curvature class.
/// Variables: per-class grid functions (absent when B = 0), the curvature
/// budget lambda1 >= 0, the two mass multipliers, the slope multipliers, and
/// one multiplier per balance covariate.  The per-observation adversary terms
///   G_i = f_{class(i)}(x_i) + lambda2 w_i + lambda3 (1 - w_i)
///       + lambda4.(x_i - c) [+ lambda5.(2 w_i - 1)(x_i - c)] [+ lz.Z_i]
/// (f evaluated through the multilinear stencil) enter the objective
/// 1/4 sum G_i^2 / sigma_i^2 + lambda1^2 / (4 l_ci B^2) + lambda2 - lambda3,
/// and the optimal weights are gamma_i = -G_i/(2 sigma_i^2).
inline DualProgram build_dual(const WeightInputs& in, const Grid& grid,
                              const DirectionSet& dirs) {
  const Eigen::Index n = in.rows();
  const int dim = in.dim();
  const int psi = arm_split(in.estimand);
  const Eigen::Index p = in.balance.cols();
  if (in.sigma_sq.size() != n || (in.sigma_sq.array() <= 0).any())
    fail_design("noise variances must be present and positive for every observation");
  if (!(in.B >= 0)) fail_design("curvature bound must be nonnegative");
  if (!(in.lambda_ci > 0)) fail_design("the bias-squared objective weight must be positive");

  DualProgram out;
  out.in = in;
  out.grid = grid;
  out.dirs = dirs;
  out.curved = in.B > 0;
  out.m = grid.size();
  out.blocks = psi ? 2 : 1;

  const Eigen::Index m = out.m;
  const Eigen::Index nf = out.curved ? out.blocks * m : 0;
  out.off_lambda = nf;
  // lambda1 only exists in the curved program; keep the rest contiguous.
  const Eigen::Index i_l1 = nf;
  const Eigen::Index i_l2 = nf + (out.curved ? 1 : 0);
  const Eigen::Index i_l3 = i_l2 + 1;
  const Eigen::Index i_l4 = i_l3 + 1;
  const Eigen::Index i_l5 = i_l4 + dim;
  const Eigen::Index i_lz = i_l5 + psi * dim;
  const Eigen::Index nvar = i_lz + p;

  out.stencil.resize(static_cast<std::size_t>(n));
  std::vector<Triplet> pt;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.stencil[static_cast<std::size_t>(i)] = grid.stencil(in.x.row(i).transpose());
    // Sparse gradient of G_i.
    std::vector<std::pair<Eigen::Index, double>> a;
    if (out.curved) {
      const int b = out.blocks == 2 ? in.w[i] : 0;
      for (const auto& sn : out.stencil[static_cast<std::size_t>(i)])
        a.emplace_back(b * m + sn.index, sn.weight);
    }
    if (in.w[i])
      a.emplace_back(i_l2, 1.0);
    else
      a.emplace_back(i_l3, 1.0);
    for (int ax = 0; ax < dim; ++ax) {
      const double d = in.x(i, ax) - in.c[ax];
      if (d != 0) a.emplace_back(i_l4 + ax, d);
      if (psi && d != 0) a.emplace_back(i_l5 + ax, (2.0 * in.w[i] - 1.0) * d);
    }
    for (Eigen::Index j = 0; j < p; ++j)
      if (in.balance(i, j) != 0) a.emplace_back(i_lz + j, in.balance(i, j));
    const double scale = 1.0 / (2.0 * in.sigma_sq[i]);
    for (const auto& [r, vr] : a)
      for (const auto& [cc, vc] : a)
        pt.emplace_back(static_cast<int>(r), static_cast<int>(cc), scale * vr * vc);
  }
  if (out.curved) {
    pt.emplace_back(static_cast<int>(i_l1), static_cast<int>(i_l1),
                    1.0 / (2.0 * in.lambda_ci * in.B * in.B));
    // Grid nodes outside every observation's stencil only enter through the
    // curvature cone, leaving a degenerate optimal face that the splitting
    // solver chatters on.  A ridge far below the data curvature of the
    // objective pins those nodes without measurably moving gamma.
    double scale = 0;
    for (Eigen::Index i = 0; i < n; ++i) scale += 1.0 / (2.0 * in.sigma_sq[i]);
    const double ridge_f = 1e-9 * scale / static_cast<double>(n);
    for (Eigen::Index v = 0; v < nf; ++v)
      pt.emplace_back(static_cast<int>(v), static_cast<int>(v), ridge_f);
  }

  out.qp.P = SpMat(nvar, nvar);
  out.qp.P.setFromTriplets(pt.begin(), pt.end());
  out.qp.q = Vec::Zero(nvar);
  out.qp.q[i_l2] = 1.0;
  out.qp.q[i_l3] = -1.0;

  std::vector<Triplet> at;
  std::vector<double> lo, hi;
  auto add_row = [&](double lb, double ub) {
    lo.push_back(lb);
    hi.push_back(ub);
    return static_cast<int>(lo.size() - 1);
  };
  if (out.curved) {
    // lambda1 >= 0
    at.emplace_back(add_row(0.0, kInf), static_cast<int>(i_l1), 1.0);
    const auto rows = curvature_rows(grid, dirs);
    const Eigen::Index focal = grid.focal_index();
    const auto offsets = grid.focal_offset_indices();
    for (int b = 0; b < out.blocks; ++b) {
      const Eigen::Index off = b * m;
      int r = add_row(0.0, 0.0);  // f(c) = 0
      at.emplace_back(r, static_cast<int>(off + focal), 1.0);
      for (Eigen::Index o : offsets) {
        r = add_row(0.0, 0.0);  // f(c + h e_a) = 0
        at.emplace_back(r, static_cast<int>(off + o), 1.0);
      }
      for (const auto& cr : rows) {
        // second difference <= lambda1 ||h v||^2 and >= -lambda1 ||h v||^2
        int r1 = add_row(-kInf, 0.0);
        at.emplace_back(r1, static_cast<int>(off + cr.minus), 1.0);
        at.emplace_back(r1, static_cast<int>(off + cr.plus), 1.0);
        at.emplace_back(r1, static_cast<int>(off + cr.center), -2.0);
        at.emplace_back(r1, static_cast<int>(i_l1), -cr.hv_norm_sq);
        int r2 = add_row(0.0, kInf);
        at.emplace_back(r2, static_cast<int>(off + cr.minus), 1.0);
        at.emplace_back(r2, static_cast<int>(off + cr.plus), 1.0);
        at.emplace_back(r2, static_cast<int>(off + cr.center), -2.0);
        at.emplace_back(r2, static_cast<int>(i_l1), cr.hv_norm_sq);
      }
    }
  }
  const Eigen::Index n_rows = static_cast<Eigen::Index>(lo.size());
  out.qp.A = SpMat(n_rows, nvar);
  out.qp.A.setFromTriplets(at.begin(), at.end());
  out.qp.l = Eigen::Map<Vec>(lo.data(), n_rows);
  out.qp.u = Eigen::Map<Vec>(hi.data(), n_rows);
  return out;
}

/// Minimax weight solution together with its certificates and diagnostics.
struct WeightSolution {
  Vec gamma;
  double t_hat = 0;        ///< certified worst-case absolute bias at curvature B
  double variance = 0;     ///< sum gamma_i^2 sigma_i^2
  double objective = 0;    ///< optimized value: variance + lambda_ci * (discrete bias)^2
  double lambda1 = 0;      ///< curvature budget multiplier
  double lambda2 = 0, lambda3 = 0;
  Vec lambda4, lambda5, lambda_z;
  double oracle_bias = 0;  ///< independent re-evaluation of the bias bound
  double moment_residual = 0;
  SolveStatus status = SolveStatus::MaxIterations;
  long iterations = 0;
  bool polished = false;
  double grid_h = 0;
  Eigen::Index grid_points = 0;
  double alpha_sq = 0;
};

/// Reads the weights off a solved dual, verifies the moment identities, and
/// re-certifies the bias bound with the independent oracle (exact for one
/// running variable, grid LP otherwise).
inline WeightSolution recover_weights(const DualProgram& dp, const SolveResult& res,
                                      bool certify = true,
                                      const SolverSettings& oracle_settings = {}) {
  if (res.status != SolveStatus::Optimal)
    fail_solver(std::string("dual weight program not solved to optimality: ") +
                to_string(res.status));
  const WeightInputs& in = dp.in;
  const Eigen::Index n = in.rows();
  const int dim = in.dim();
  const int psi = arm_split(in.estimand);
  const Eigen::Index p = in.balance.cols();
  const Eigen::Index i_l1 = dp.off_lambda;
  const Eigen::Index i_l2 = dp.off_lambda + (dp.curved ? 1 : 0);
  const Eigen::Index i_l3 = i_l2 + 1;
  const Eigen::Index i_l4 = i_l3 + 1;
  const Eigen::Index i_l5 = i_l4 + dim;
  const Eigen::Index i_lz = i_l5 + psi * dim;

  WeightSolution s;
  s.status = res.status;
  s.iterations = res.iterations;
  s.polished = res.polished;
  s.grid_h = dp.grid.h;
  s.grid_points = dp.grid.size();
  s.alpha_sq = alpha_squared(dp.dirs, dim);
  s.gamma.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double G = 0;
    if (dp.curved) {
      const int b = dp.blocks == 2 ? in.w[i] : 0;
      for (const auto& sn : dp.stencil[static_cast<std::size_t>(i)])
        G += sn.weight * res.x[b * dp.m + sn.index];
    }
    G += in.w[i] ? res.x[i_l2] : res.x[i_l3];
    for (int a = 0; a < dim; ++a) {
      const double d = in.x(i, a) - in.c[a];
      G += res.x[i_l4 + a] * d;
      if (psi) G += res.x[i_l5 + a] * (2.0 * in.w[i] - 1.0) * d;
    }
    for (Eigen::Index j = 0; j < p; ++j) G += res.x[i_lz + j] * in.balance(i, j);
    s.gamma[i] = -G / (2.0 * in.sigma_sq[i]);
  }
  s.lambda1 = dp.curved ? std::max(0.0, res.x[i_l1]) : 0.0;
  s.lambda2 = res.x[i_l2];
  s.lambda3 = res.x[i_l3];
  s.lambda4 = res.x.segment(i_l4, dim);
  if (psi) s.lambda5 = res.x.segment(i_l5, dim);
  if (p) s.lambda_z = res.x.segment(i_lz, p);
  s.t_hat = in.B > 0 ? s.lambda1 / (2.0 * in.lambda_ci * in.B) : 0.0;
  if (in.B > 0) {
    // The discrete program evaluates candidate functions by interpolation,
    // which understates a curvature-B function by up to B * interp_slack at
    // each off-lattice observation.  Folding that certified allowance into
    // the reported bound keeps it an upper estimate of the continuum
    // worst-case bias of the returned weights.
    double slack = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      slack += std::abs(s.gamma[i]) * dp.grid.interp_slack(in.x.row(i).transpose());
    s.t_hat += in.B * slack;
  }
  s.variance = (s.gamma.array().square() * in.sigma_sq.array()).sum();
  s.objective = -res.objective;  // primal optimum, by strong duality

  // Moment identity check: these are exactly the stationarity conditions of
  // the multipliers, so their residuals measure remaining solver error.
  {
    Mat M;
    Vec b;
    std::vector<std::string> names;
    detail::moment_system(in, &M, &b, &names);
    Vec resid = M * s.gamma - b;
    double worst = 0;
    std::string worst_name;
    for (Eigen::Index r = 0; r < resid.size(); ++r) {
      const double scale = std::max(1.0, M.row(r).cwiseAbs().dot(s.gamma.cwiseAbs()));
      const double v = std::abs(resid[r]) / scale;
      if (v > worst) {
        worst = v;
        worst_name = names[static_cast<std::size_t>(r)];
      }
    }
    s.moment_residual = worst;
    if (worst > 1e-6)
      fail_solver("recovered weights violate " + worst_name + " by " + std::to_string(worst) +
                  " (relative); tighten the solver tolerances or refine the grid");
  }

  if (certify) {
    BiasEvaluation ev =
        dim == 1 ? univariate_worst_case_bias(in.x, in.w, s.gamma, in.c, in.estimand, in.B)
                 : grid_worst_case_bias(in.x, in.w, s.gamma, in.c, in.estimand, in.B, dp.grid,
                                        dp.dirs, oracle_settings);
    s.oracle_bias = ev.value;
  } else {
    s.oracle_bias = s.t_hat;
  }
  return s;
}

/// Built primal program (weights are explicit variables); intended for
/// cross-checks and modest sizes.
struct PrimalProgram {
  QuadraticProgram qp;
  WeightInputs in;
  Grid grid;
  DirectionSet dirs;
  Eigen::Index off_gamma = 0, idx_t = 0, off_eta = 0, off_nu = 0;
  Eigen::Index n_eta = 0, n_nu = 0;
};

/// Primal form: minimize sum gamma_i^2 sigma_i^2 + lambda_ci t^2 subject to
/// the moment equalities and "worst grid-class bias <= t", the latter encoded
/// through the adversary's own optimality system (its dual multipliers eta
/// over the curvature rows and nu over the anchors appear as variables).
/// Capped at 400 observations; the dual route scales better.
inline PrimalProgram build_primal(const WeightInputs& in, const Grid& grid,
                                  const DirectionSet& dirs, Eigen::Index max_obs = 400) {
  const Eigen::Index n = in.rows();
  if (n > max_obs)
    fail_design("primal builder capped at " + std::to_string(max_obs) +
                " observations; use the dual route");
  const int psi = arm_split(in.estimand);
  if (in.sigma_sq.size() != n || (in.sigma_sq.array() <= 0).any())
    fail_design("noise variances must be present and positive for every observation");
  detail::require_feasible(in);

  PrimalProgram out;
  out.in = in;
  out.grid = grid;
  out.dirs = dirs;
  const int blocks = psi ? 2 : 1;
  const Eigen::Index m = grid.size();
  const auto rows = curvature_rows(grid, dirs);
  const bool curved = in.B > 0;
  const Eigen::Index eta_per_block = curved ? 2 * static_cast<Eigen::Index>(rows.size()) : 0;
  const auto offsets = grid.focal_offset_indices();
  const Eigen::Index nu_per_block = curved ? 1 + static_cast<Eigen::Index>(offsets.size()) : 0;

  out.off_gamma = 0;
  out.idx_t = n;
  out.off_eta = n + 1;
  out.n_eta = blocks * eta_per_block;
  out.off_nu = out.off_eta + out.n_eta;
  out.n_nu = blocks * nu_per_block;
  const Eigen::Index nvar = out.off_nu + out.n_nu;

  std::vector<Triplet> pt;
  for (Eigen::Index i = 0; i < n; ++i)
    pt.emplace_back(static_cast<int>(i), static_cast<int>(i), 2.0 * in.sigma_sq[i]);
  pt.emplace_back(static_cast<int>(out.idx_t), static_cast<int>(out.idx_t), 2.0 * in.lambda_ci);
  // The adversary multipliers are objective-free and usually non-unique, and
  // the splitting solver chatters on that degenerate face.  A ridge far below
  // the weight-variance curvature selects one multiplier set; it perturbs the
  // (gamma, t) part only through second order.
  {
    double scale = 0;
    for (Eigen::Index i = 0; i < n; ++i) scale += 2.0 * in.sigma_sq[i];
    const double ridge_ad = 1e-10 * scale / static_cast<double>(n);
    for (Eigen::Index v = out.off_eta; v < nvar; ++v)
      pt.emplace_back(static_cast<int>(v), static_cast<int>(v), ridge_ad);
  }
  out.qp.P = SpMat(nvar, nvar);
  out.qp.P.setFromTriplets(pt.begin(), pt.end());
  out.qp.q = Vec::Zero(nvar);

  std::vector<Triplet> at;
  std::vector<double> lo, hi;
  auto add_row = [&](double lb, double ub) {
    lo.push_back(lb);
    hi.push_back(ub);
    return static_cast<int>(lo.size() - 1);
  };

  // Moment equalities on gamma.
  {
    Mat M;
    Vec b;
    std::vector<std::string> names;
    detail::moment_system(in, &M, &b, &names);
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
      int row = add_row(b[r], b[r]);
      for (Eigen::Index i = 0; i < n; ++i)
        if (M(r, i) != 0) at.emplace_back(row, static_cast<int>(i), M(r, i));
    }
  }

  if (curved) {
    // Adversary stationarity: for every grid slot of every class,
    //   sum_rows D' eta + sum_anchors E' nu - phi(gamma) = 0.
    std::vector<int> slot_row(static_cast<std::size_t>(blocks * m));
    for (int b = 0; b < blocks; ++b)
      for (Eigen::Index g = 0; g < m; ++g)
        slot_row[static_cast<std::size_t>(b * m + g)] = add_row(0.0, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int b = blocks == 2 ? in.w[i] : 0;
      for (const auto& sn : grid.stencil(in.x.row(i).transpose()))
        at.emplace_back(slot_row[static_cast<std::size_t>(b * m + sn.index)],
                        static_cast<int>(i), -sn.weight);
    }
    int bias_row = add_row(-kInf, 0.0);  // b' eta - t <= 0
    at.emplace_back(bias_row, static_cast<int>(out.idx_t), -1.0);
    Eigen::Index e = out.off_eta, v = out.off_nu;
    for (int b = 0; b < blocks; ++b) {
      for (const auto& cr : rows) {
        for (double sign : {+1.0, -1.0}) {
          at.emplace_back(slot_row[static_cast<std::size_t>(b * m + cr.minus)],
                          static_cast<int>(e), sign);
          at.emplace_back(slot_row[static_cast<std::size_t>(b * m + cr.plus)],
                          static_cast<int>(e), sign);
          at.emplace_back(slot_row[static_cast<std::size_t>(b * m + cr.center)],
                          static_cast<int>(e), -2.0 * sign);
          at.emplace_back(bias_row, static_cast<int>(e), in.B * cr.hv_norm_sq);
          int pos = add_row(0.0, kInf);  // eta >= 0
          at.emplace_back(pos, static_cast<int>(e), 1.0);
          ++e;
        }
      }
      at.emplace_back(slot_row[static_cast<std::size_t>(b * m + grid.focal_index())],
                      static_cast<int>(v), 1.0);
      ++v;
      for (Eigen::Index o : offsets) {
        at.emplace_back(slot_row[static_cast<std::size_t>(b * m + o)], static_cast<int>(v), 1.0);
        ++v;
      }
    }
  } else {
    int tz = add_row(0.0, 0.0);  // flat class: no curvature bias
    at.emplace_back(tz, static_cast<int>(out.idx_t), 1.0);
  }

  const Eigen::Index n_rows = static_cast<Eigen::Index>(lo.size());
  out.qp.A = SpMat(n_rows, nvar);
  out.qp.A.setFromTriplets(at.begin(), at.end());
  out.qp.l = Eigen::Map<Vec>(lo.data(), n_rows);
  out.qp.u = Eigen::Map<Vec>(hi.data(), n_rows);
  return out;
}

/// Reads (gamma, t) off a solved primal program.
inline WeightSolution recover_primal_weights(const PrimalProgram& pp, const SolveResult& res) {
  if (res.status != SolveStatus::Optimal)
    fail_solver(std::string("primal weight program not solved to optimality: ") +
                to_string(res.status));
  WeightSolution s;
  s.status = res.status;
  s.iterations = res.iterations;
  s.polished = res.polished;
  s.gamma = res.x.segment(pp.off_gamma, pp.in.rows());
  s.t_hat = std::max(0.0, res.x[pp.idx_t]);
  if (pp.in.B > 0) {
    // Same interpolation-error allowance as the dual route, so the two
    // routes certify the same quantity.
    double slack = 0;
    for (Eigen::Index i = 0; i < pp.in.rows(); ++i)
      slack += std::abs(s.gamma[i]) * pp.grid.interp_slack(pp.in.x.row(i).transpose());
    s.t_hat += pp.in.B * slack;
  }
  s.variance = (s.gamma.array().square() * pp.in.sigma_sq.array()).sum();
  s.objective = res.objective;
  s.grid_h = pp.grid.h;
  s.grid_points = pp.grid.size();
  s.alpha_sq = alpha_squared(pp.dirs, pp.in.dim());
  s.oracle_bias = s.t_hat;
  return s;
}

/// Options for the one-call dual-route solve.
struct SolveWeightOptions {
  std::optional<double> grid_h;  ///< lattice spacing (default: data-range based)
  DirectionChoice directions = DirectionChoice::Fine;
  SolverSettings solver;
  bool certify = true;
  Eigen::Index max_grid_points = 200000;
};

/// Builds the lattice, checks feasibility, solves the dual program and
/// recovers certified weights.
inline WeightSolution solve_weights(const WeightInputs& in,
                                    const SolveWeightOptions& opts = {}) {
  detail::require_feasible(in);
  const double h = opts.grid_h ? *opts.grid_h : default_grid_spacing(in.x, in.dim());
  Grid grid = build_lattice(in.x, in.c, h, opts.max_grid_points);
  DirectionSet dirs = direction_set(in.dim(), opts.directions);
  DualProgram dp = build_dual(in, grid, dirs);
  SolveResult res = solve_qp(dp.qp, opts.solver);
  return recover_weights(dp, res, opts.certify, opts.solver);
}

}  // namespace mmrd
