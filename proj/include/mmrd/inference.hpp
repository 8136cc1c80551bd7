#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmrd/design.hpp"
#include "mmrd/optimizer.hpp"
#include "mmrd/types.hpp"

namespace mmrd {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) fail_design("normal quantile requires p in (0, 1)");
  double lo = -13.0, hi = 13.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Critical value for an estimate whose absolute bias is at most r standard
/// errors: the smallest cv with Phi(cv - r) - Phi(-cv - r) = 1 - alpha.
/// Monotone in cv, solved by bracketing + bisection to 1e-8.
inline double bias_adjusted_critical_value(double bias_ratio, double alpha) {
  if (!(bias_ratio >= 0) || !std::isfinite(bias_ratio))
    fail_design("bias ratio must be finite and nonnegative");
  if (!(alpha > 0 && alpha < 1)) fail_design("alpha must lie in (0, 1)");
  const double target = 1.0 - alpha;
  auto coverage = [&](double cv) {
    return normal_cdf(cv - bias_ratio) - normal_cdf(-cv - bias_ratio);
  };
  double lo = 0.0;
  double hi = bias_ratio + normal_quantile(1.0 - alpha / 2.0) + 1.0;
  while (coverage(hi) < target) hi *= 2.0;
  while (hi - lo > 1e-8) {
    const double mid = 0.5 * (lo + hi);
    (coverage(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Uniform-over-bias confidence halfwidth: s * cv(t/s).
inline double bias_aware_halfwidth(double max_bias, double std_err, double alpha) {
  if (!(std_err > 0)) fail_design("standard error must be positive");
  if (!(max_bias >= 0)) fail_design("bias bound must be nonnegative");
  return std_err * bias_adjusted_critical_value(max_bias / std_err, alpha);
}

/// Residual regression: count-weighted least squares of the outcome on
/// arm-interacted linear terms in (x - c).
struct SigmaEstimate {
  double sigma_sq = 0;      ///< floored estimate
  double raw_sigma_sq = 0;  ///< before the floor
  double floor = 0;         ///< 1e-12 * outcome variance (0 when disabled)
  double var_y = 0;
  Vec mu_hat;               ///< fitted values per retained row
  Vec resid;                ///< y - mu_hat
};

inline SigmaEstimate estimate_sigma(const Dataset& d, const Vec& c, bool apply_floor = true) {
  const Eigen::Index n = d.rows();
  const int dim = d.dim;
  const Eigen::Index p = 2 * (dim + 1);
  for (int arm = 0; arm <= 1; ++arm) {
    std::set<std::vector<double>> support;
    for (Eigen::Index i = 0; i < n; ++i)
      if (d.w[i] == arm)
        support.insert(std::vector<double>(d.x.row(i).begin(), d.x.row(i).end()));
    if (static_cast<Eigen::Index>(support.size()) < dim + 1)
      fail_design(std::string("residual regression needs at least ") +
                  std::to_string(dim + 1) + " distinct support points in the " +
                  (arm ? "treated" : "control") + " arm");
  }
  Mat Z(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double wi = d.w[i];
    Z(i, 0) = 1.0 - wi;
    Z(i, dim + 1) = wi;
    for (int a = 0; a < dim; ++a) {
      const double dx = d.x(i, a) - c[a];
      Z(i, 1 + a) = (1.0 - wi) * dx;
      Z(i, dim + 2 + a) = wi * dx;
    }
  }
  const Vec sqc = d.count.cwiseSqrt();
  Mat Zw = sqc.asDiagonal() * Z;
  Eigen::ColPivHouseholderQR<Mat> qr(Zw);
  if (qr.rank() < p)
    fail_design("residual regression is rank-deficient on the retained support");
  const Vec beta = qr.solve(sqc.cwiseProduct(d.y));

  SigmaEstimate out;
  out.mu_hat = Z * beta;
  out.resid = d.y - out.mu_hat;
  const double N = d.count.sum();
  const double rss = (d.count.array() * out.resid.array().square()).sum() + d.ss.sum();
  out.raw_sigma_sq = N - static_cast<double>(p) > 0 ? rss / (N - static_cast<double>(p)) : 0.0;
  const double mean_y = d.count.dot(d.y) / N;
  out.var_y = N > 1 ? ((d.count.array() * (d.y.array() - mean_y).square()).sum() + d.ss.sum()) /
                          (N - 1.0)
                    : 0.0;
  out.floor = apply_floor ? 1e-12 * out.var_y : 0.0;
  out.sigma_sq = std::max(out.raw_sigma_sq, out.floor);
  if (!(out.sigma_sq > 0))
    fail_design("outcome variance is zero on the retained sample; supply noise levels");
  return out;
}

inline double point_estimate(const Vec& gamma, const Vec& y) { return gamma.dot(y); }

/// Plug-in standard error sqrt(sum gamma_i^2 r_i^2), floored consistently
/// with the variance floor so exact fits still yield a positive scale.
inline double sampling_error(const Vec& gamma, const Vec& resid, const Vec& count,
                             double variance_floor) {
  double s2 = (gamma.array().square() * resid.array().square()).sum();
  const double floor = (gamma.array().square() / count.array()).sum() * variance_floor;
  s2 = std::max(s2, floor);
  if (!(s2 > 0)) fail_design("sampling error is zero; supply noise levels");
  return std::sqrt(s2);
}

/// Per-arm effective sample sizes 1 / sum_i gamma_i^2 / count_i (the count
/// division makes replicated rows equivalent to their raw expansion).
inline Eigen::Vector2d effective_sample_size(const Vec& gamma, const IntVec& w,
                                             const Vec& count) {
  Eigen::Vector2d denom = Eigen::Vector2d::Zero();
  for (Eigen::Index i = 0; i < gamma.size(); ++i)
    denom[w[i]] += gamma[i] * gamma[i] / count[i];
  Eigen::Vector2d ess;
  for (int a = 0; a < 2; ++a) ess[a] = denom[a] > 0 ? 1.0 / denom[a] : 0.0;
  return ess;
}

/// Largest share of the squared-weight mass carried by one observation.
inline double max_weight_share(const Vec& gamma) {
  const double total = gamma.squaredNorm();
  return total > 0 ? gamma.cwiseAbs2().maxCoeff() / total : 0.0;
}

/// Data-driven curvature bound: per-arm quadratic least squares, bound =
/// multiplier times the largest fitted Hessian operator norm.
struct CurvatureHeuristic {
  double bound = 0;
  double max_hessian_norm = 0;
};

inline CurvatureHeuristic curvature_bound_heuristic(const Dataset& d, const Vec& c,
                                                    double multiplier) {
  if (!(multiplier > 0)) fail_design("heuristic multiplier must be positive");
  const int dim = d.dim;
  const Eigen::Index p = dim == 1 ? 3 : 6;
  double worst = 0;
  for (int arm = 0; arm <= 1; ++arm) {
    std::vector<Eigen::Index> idx;
    std::set<std::vector<double>> support;
    for (Eigen::Index i = 0; i < d.rows(); ++i)
      if (d.w[i] == arm) {
        idx.push_back(i);
        support.insert(std::vector<double>(d.x.row(i).begin(), d.x.row(i).end()));
      }
    if (static_cast<Eigen::Index>(support.size()) < p)
      fail_design(std::string("curvature heuristic needs at least ") + std::to_string(p) +
                  " distinct support points in the " + (arm ? "treated" : "control") +
                  " arm; supply the bound explicitly");
    Mat Z(static_cast<Eigen::Index>(idx.size()), p);
    Vec yv(static_cast<Eigen::Index>(idx.size())), cw(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const Eigen::Index i = idx[r];
      const double d1 = d.x(i, 0) - c[0];
      Z(static_cast<Eigen::Index>(r), 0) = 1.0;
      Z(static_cast<Eigen::Index>(r), 1) = d1;
      if (dim == 1) {
        Z(static_cast<Eigen::Index>(r), 2) = d1 * d1;
      } else {
        const double d2 = d.x(i, 1) - c[1];
        Z(static_cast<Eigen::Index>(r), 2) = d2;
        Z(static_cast<Eigen::Index>(r), 3) = d1 * d1;
        Z(static_cast<Eigen::Index>(r), 4) = d1 * d2;
        Z(static_cast<Eigen::Index>(r), 5) = d2 * d2;
      }
      yv[static_cast<Eigen::Index>(r)] = d.y[i];
      cw[static_cast<Eigen::Index>(r)] = std::sqrt(d.count[i]);
    }
    Eigen::ColPivHouseholderQR<Mat> qr(cw.asDiagonal() * Z);
    if (qr.rank() < p)
      fail_design(std::string("curvature heuristic regression is rank-deficient in the ") +
                  (arm ? "treated" : "control") + " arm; supply the bound explicitly");
    Vec beta = qr.solve(cw.cwiseProduct(yv));
    double hnorm = 0;
    if (dim == 1) {
      hnorm = std::abs(2.0 * beta[2]);
    } else {
      Eigen::Matrix2d H;
      H << 2.0 * beta[3], beta[4], beta[4], 2.0 * beta[5];
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(H);
      hnorm = eig.eigenvalues().cwiseAbs().maxCoeff();
    }
    worst = std::max(worst, hnorm);
  }
  return {multiplier * worst, worst};
}

struct PipelineOptions {
  std::optional<double> bound;                 ///< curvature bound B
  std::optional<double> heuristic_multiplier;  ///< used when bound is absent
  double alpha = 0.05;
  double lambda_ci = 1.0;
  std::optional<double> grid_h;
  DirectionChoice directions = DirectionChoice::Fine;
  SolverSettings solver;
  bool variance_floor = true;
  bool certify = true;
  Eigen::Index max_grid_points = 200000;
};

struct InferenceReport {
  double tau_hat = 0;
  double std_err = 0;
  double max_bias = 0;
  double halfwidth = 0;
  double ci_lo = 0, ci_hi = 0;
  double alpha = 0.05;
  double bound = 0;
  double lambda_ci = 1.0;
  double ess_control = 0, ess_treated = 0;
  double max_weight_share = 0;
  double sigma_sq = 0;            ///< homoskedastic value when applicable, else 0
  bool sigma_estimated = false;
  Eigen::Index n_retained = 0, n_dropped = 0;
  double total_count = 0;
  Vec implied_focal;              ///< weighted focal point (weighted estimand only)
  std::vector<std::string> warnings;
  WeightSolution solution;
  Estimand estimand = Estimand::PointwiseCate;
  int dim = 1;
};

/// End-to-end run: noise levels, minimax weights, certificates, bias-aware
/// interval, and diagnostics.
inline InferenceReport run_pipeline(const DesignProblem& problem, const PipelineOptions& opts) {
  const Dataset& d = problem.data;
  InferenceReport rep;
  rep.alpha = opts.alpha;
  rep.lambda_ci = opts.lambda_ci;
  rep.estimand = problem.estimand;
  rep.dim = d.dim;
  rep.n_retained = d.rows();
  rep.n_dropped = problem.n_dropped;
  rep.total_count = d.total_count();
  if (!(opts.alpha > 0 && opts.alpha < 1)) fail_design("alpha must lie in (0, 1)");

  // Noise levels.  With estimated noise the residual regression also feeds
  // the plug-in standard error below; with known noise the standard error is
  // the exact sd of the linear estimator and no regression is needed (it
  // could even fail on thin or exactly-fitting designs).
  SigmaEstimate sig;
  Vec sigma_sq(d.rows());
  if (problem.noise.kind == NoiseModel::Kind::EstimateFromData) {
    sig = estimate_sigma(d, problem.c, opts.variance_floor);
    sigma_sq = (sig.sigma_sq / d.count.array()).matrix();
    rep.sigma_sq = sig.sigma_sq;
    rep.sigma_estimated = true;
    if (sig.raw_sigma_sq < sig.floor)
      rep.warnings.push_back("outcome variance floor applied (residuals are exactly zero)");
  } else {
    sigma_sq = problem.sigma_sq;
    if (problem.noise.kind == NoiseModel::Kind::Homoskedastic)
      rep.sigma_sq = problem.noise.sigma_sq;
  }

  // Curvature bound.
  double B;
  if (opts.bound) {
    B = *opts.bound;
    if (!(B >= 0) || !std::isfinite(B)) fail_design("curvature bound must be finite and >= 0");
  } else if (opts.heuristic_multiplier) {
    CurvatureHeuristic h = curvature_bound_heuristic(d, problem.c, *opts.heuristic_multiplier);
    B = h.bound;
    if (B == 0)
      rep.warnings.push_back(
          "curvature heuristic found no curvature (arm fits are linear); supply a bound "
          "explicitly if this is not intended");
  } else {
    fail_design("a curvature bound is required: supply one or enable the heuristic");
  }
  rep.bound = B;

  WeightInputs in;
  in.x = d.x;
  in.w = d.w;
  in.sigma_sq = sigma_sq;
  in.c = problem.c;
  in.estimand = problem.estimand;
  in.B = B;
  in.lambda_ci = opts.lambda_ci;
  in.balance = problem.z;
  SolveWeightOptions sw;
  sw.grid_h = opts.grid_h;
  sw.directions = opts.directions;
  sw.solver = opts.solver;
  sw.certify = opts.certify;
  sw.max_grid_points = opts.max_grid_points;
  rep.solution = solve_weights(in, sw);
  const Vec& gamma = rep.solution.gamma;

  rep.tau_hat = point_estimate(gamma, d.y);
  rep.max_bias = rep.solution.t_hat;
  rep.std_err = problem.noise.kind == NoiseModel::Kind::EstimateFromData
                    ? sampling_error(gamma, sig.resid, d.count, sig.floor)
                    : std::sqrt(rep.solution.variance);
  rep.halfwidth = bias_aware_halfwidth(rep.max_bias, rep.std_err, opts.alpha);
  rep.ci_lo = rep.tau_hat - rep.halfwidth;
  rep.ci_hi = rep.tau_hat + rep.halfwidth;
  const Eigen::Vector2d ess = effective_sample_size(gamma, d.w, d.count);
  rep.ess_control = ess[0];
  rep.ess_treated = ess[1];
  rep.max_weight_share = max_weight_share(gamma);
  if (rep.max_weight_share > 0.2)
    rep.warnings.push_back(
        "one observation carries more than 20% of the squared weight; the normal "
        "approximation may be fragile");

  if (std::isfinite(problem.window_radius)) {
    double edge_max = 0, overall_max = gamma.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < d.rows(); ++i)
      if ((d.x.row(i).transpose() - problem.c).norm() >= 0.95 * problem.window_radius)
        edge_max = std::max(edge_max, std::abs(gamma[i]));
    if (edge_max > 0.01 * overall_max)
      rep.warnings.push_back(
          "weights remain large near the window edge (outer 5% annulus); the window is "
          "binding, consider widening it");
  }

  if (problem.estimand == Estimand::WeightedCate) {
    Vec xs = Vec::Zero(d.dim);
    for (Eigen::Index i = 0; i < d.rows(); ++i)
      if (d.w[i]) xs += gamma[i] * d.x.row(i).transpose();
    rep.implied_focal = xs;
  }
  return rep;
}

struct SensitivityRow {
  double bound = 0;
  std::optional<InferenceReport> report;
  std::string error;  ///< empty on success
};

/// Re-runs the pipeline for each curvature bound; failures are recorded per
/// row and do not abort the sweep.
inline std::vector<SensitivityRow> sensitivity_over_bounds(const DesignProblem& problem,
                                                           const std::vector<double>& bounds,
                                                           const PipelineOptions& base) {
  std::vector<SensitivityRow> rows;
  rows.reserve(bounds.size());
  for (double b : bounds) {
    SensitivityRow row;
    row.bound = b;
    try {
      PipelineOptions o = base;
      o.bound = b;
      o.heuristic_multiplier.reset();
      row.report = run_pipeline(problem, o);
    } catch (const Error& e) {
      row.error = std::string(to_string(e.kind())) + ": " + e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mmrd
