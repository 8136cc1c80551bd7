#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmrd/bias.hpp"
#include "mmrd/types.hpp"

namespace mmrd {

enum class KernelType { Rectangular, Triangular };

inline const char* to_string(KernelType k) {
  return k == KernelType::Rectangular ? "rectangular" : "triangular";
}

struct KernelSpec {
  KernelType type = KernelType::Triangular;
  double bandwidth = 1.0;
};

inline double kernel_value(KernelType type, double t) {
  if (type == KernelType::Rectangular) return t <= 1.0 ? 1.0 : 0.0;
  return std::max(0.0, 1.0 - t);
}

/// Implied weights of the jump coefficient in a kernel-weighted regression of
/// the outcome on {1, w, (x-c)_-, (x-c)_+} (one running variable, threshold
/// assignment).  The weights satisfy the same moment identities as the
/// optimized ones, so their worst-case bias is finite.
inline Vec llr_weights(const Mat& x, const IntVec& w, const Vec& count, double c,
                       const KernelSpec& kernel) {
  if (x.cols() != 1) fail_design("local linear weights are defined for one running variable");
  const Eigen::Index n = x.rows();
  if (w.size() != n || count.size() != n)
    fail_design("local linear weight inputs have inconsistent lengths");
  if (!(kernel.bandwidth > 0)) fail_design("bandwidth must be positive");
  for (Eigen::Index i = 0; i < n; ++i)
    if (w[i] != (x(i, 0) >= c ? 1 : 0))
      fail_design("local linear weights require the threshold design w = 1{x >= c}");

  Vec k(n);
  std::set<double> sup0, sup1;
  for (Eigen::Index i = 0; i < n; ++i) {
    k[i] = kernel_value(kernel.type, std::abs(x(i, 0) - c) / kernel.bandwidth) * count[i];
    if (k[i] > 0) (w[i] ? sup1 : sup0).insert(x(i, 0));
  }
  if (sup0.size() < 2 || sup1.size() < 2)
    fail_design("bandwidth leaves fewer than 2 support points with positive weight on a side");

  Mat Z(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = x(i, 0) - c;
    Z(i, 0) = 1.0;
    Z(i, 1) = w[i];
    Z(i, 2) = std::min(d, 0.0);
    Z(i, 3) = std::max(d, 0.0);
  }
  Mat S = Z.transpose() * k.asDiagonal() * Z;
  Eigen::ColPivHouseholderQR<Mat> qr(S);
  if (qr.rank() < 4) fail_design("kernel regression is singular at this bandwidth");
  Vec e2 = Vec::Zero(4);
  e2[1] = 1.0;
  const Vec b = qr.solve(e2);
  Vec gamma(n);
  for (Eigen::Index i = 0; i < n; ++i) gamma[i] = k[i] * Z.row(i).dot(b);
  return gamma;
}

struct MseBreakdown {
  double variance = 0;
  double worst_bias = 0;
  double mse = 0;
  bool feasible = true;
};

/// Worst-case mean squared error of arbitrary weights: variance plus the
/// squared certified bias (exact oracle; one running variable).
inline MseBreakdown worst_case_mse(const Mat& x, const IntVec& w, const Vec& gamma,
                                   const Vec& sigma_sq, const Vec& c, Estimand estimand,
                                   double B) {
  MseBreakdown out;
  out.variance = (gamma.array().square() * sigma_sq.array()).sum();
  BiasEvaluation ev = univariate_worst_case_bias(x, w, gamma, c, estimand, B);
  out.worst_bias = ev.value;
  out.feasible = ev.feasible;
  out.mse = ev.feasible ? out.variance + ev.value * ev.value : kInf;
  return out;
}

/// Same, with the bias certified on a grid (any dimension).
inline MseBreakdown worst_case_mse_grid(const Mat& x, const IntVec& w, const Vec& gamma,
                                        const Vec& sigma_sq, const Vec& c, Estimand estimand,
                                        double B, const Grid& grid, const DirectionSet& dirs,
                                        const SolverSettings& settings = {}) {
  MseBreakdown out;
  out.variance = (gamma.array().square() * sigma_sq.array()).sum();
  BiasEvaluation ev = grid_worst_case_bias(x, w, gamma, c, estimand, B, grid, dirs, settings);
  out.worst_bias = ev.value;
  out.feasible = ev.feasible;
  out.mse = ev.feasible ? out.variance + ev.value * ev.value : kInf;
  return out;
}

struct BandwidthResult {
  double bandwidth = 0;
  MseBreakdown mse;
  Vec gamma;
};

/// Minimizes worst-case MSE over the bandwidth.  The rectangular kernel's
/// MSE is piecewise constant between consecutive support distances, so those
/// distances are enumerated exactly; the triangular kernel adds a golden-
/// section refinement around the best coarse candidate.
inline BandwidthResult optimal_bandwidth_search(const Mat& x, const IntVec& w, const Vec& count,
                                                const Vec& sigma_sq, double c, double B,
                                                KernelType type,
                                                Estimand estimand = Estimand::PointwiseCate) {
  if (x.cols() != 1) fail_design("bandwidth search is defined for one running variable");
  std::vector<double> dist0, dist1;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double d = std::abs(x(i, 0) - c);
    (w[i] ? dist1 : dist0).push_back(d);
  }
  auto second_distinct = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    if (v.size() < 2) fail_design("bandwidth search needs 2 distinct support distances per side");
    return v[1];
  };
  const double need = std::max(second_distinct(dist0), second_distinct(dist1));
  const double h_min = type == KernelType::Rectangular ? need : need * (1.0 + 1e-6);
  double h_max = 0;
  for (double d : dist0) h_max = std::max(h_max, d);
  for (double d : dist1) h_max = std::max(h_max, d);

  std::vector<double> candidates;
  if (type == KernelType::Rectangular) {
    std::vector<double> all = dist0;
    all.insert(all.end(), dist1.begin(), dist1.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    for (double d : all)
      if (d >= h_min) candidates.push_back(d);
  } else {
    const int grid_points = 64;
    const double top = 4.0 * h_max;
    for (int i = 0; i < grid_points; ++i)
      candidates.push_back(h_min * std::pow(top / h_min, i / double(grid_points - 1)));
  }

  Vec cvec = count;
  auto evaluate = [&](double h) -> std::optional<std::pair<MseBreakdown, Vec>> {
    try {
      Vec g = llr_weights(x, w, cvec, c, {type, h});
      Vec cc(1);
      cc << c;
      MseBreakdown m = worst_case_mse(x, w, g, sigma_sq, cc, estimand, B);
      return std::make_pair(m, g);
    } catch (const Error&) {
      return std::nullopt;
    }
  };

  BandwidthResult best;
  best.mse.mse = kInf;
  for (double h : candidates) {
    auto r = evaluate(h);
    if (r && r->first.mse < best.mse.mse) {
      best.bandwidth = h;
      best.mse = r->first;
      best.gamma = r->second;
    }
  }
  if (!std::isfinite(best.mse.mse)) fail_design("no feasible bandwidth found");

  if (type == KernelType::Triangular) {
    // Refine in the bracket around the best coarse candidate.
    auto it = std::lower_bound(candidates.begin(), candidates.end(), best.bandwidth);
    double lo = it == candidates.begin() ? h_min : *(it - 1);
    double hi = (it + 1) == candidates.end() ? candidates.back() : *(it + 1);
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    auto val = [&](double h) {
      auto r = evaluate(h);
      return r ? r->first.mse : kInf;
    };
    double f1 = val(x1), f2 = val(x2);
    for (int iter = 0; iter < 60; ++iter) {
      if (f1 < f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - gr * (b - a);
        f1 = val(x1);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + gr * (b - a);
        f2 = val(x2);
      }
    }
    const double h_ref = 0.5 * (a + b);
    auto r = evaluate(h_ref);
    if (r && r->first.mse < best.mse.mse) {
      best.bandwidth = h_ref;
      best.mse = r->first;
      best.gamma = r->second;
    }
  }
  return best;
}

}  // namespace mmrd
