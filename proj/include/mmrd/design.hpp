#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmrd/types.hpp"

namespace mmrd {

/// Turns a raw sample into a solvable problem:
///   1. checks dimensions, finiteness and (when an observed indicator is
///      present) that the assignment rule reproduces it exactly;
///   2. drops rows with ||x - c||_2 > window_radius;
///   3. merges rows sharing the same x into one row (precision-weighted mean
///      outcome, summed count, pooled within-row sum of squares);
///   4. materializes per-row noise variances for known-noise models.
///
/// An arm left empty by the window is reported as infeasible (the unit-mass
/// moment on that arm cannot hold); thinner pathologies (e.g. a single
/// off-focal support point in an arm) surface when the program is built.
inline DesignProblem validate_design(const Dataset& raw, const Mat& z, const AssignmentRule& rule,
                                     const Vec& c, Estimand estimand, const NoiseModel& noise,
                                     double window_radius = kInf, bool w_observed = true) {
  if (raw.dim != 1 && raw.dim != 2)
    fail_design("running variable must have 1 or 2 components, got " + std::to_string(raw.dim));
  if (c.size() != raw.dim)
    fail_design("focal point has " + std::to_string(c.size()) + " components, data has " +
                std::to_string(raw.dim));
  if (!c.allFinite()) fail_design("focal point must be finite");
  const Eigen::Index n = raw.rows();
  if (n == 0) fail_design("dataset is empty");
  if (raw.x.rows() != n || raw.w.size() != n || raw.count.size() != n || raw.ss.size() != n)
    fail_design("dataset columns have inconsistent lengths");
  if (z.rows() != 0 && z.rows() != n)
    fail_design("covariate matrix has " + std::to_string(z.rows()) + " rows, data has " +
                std::to_string(n));
  if (!raw.x.allFinite() || !raw.y.allFinite() || !raw.count.allFinite() || !raw.ss.allFinite())
    fail_design("dataset contains non-finite values");
  if ((raw.count.array() <= 0).any()) fail_design("counts must be positive");
  if ((raw.ss.array() < 0).any()) fail_design("within-row sums of squares must be nonnegative");
  if (!(window_radius > 0)) fail_design("window radius must be positive");
  if (noise.kind == NoiseModel::Kind::Homoskedastic && !(noise.sigma_sq > 0))
    fail_design("homoskedastic noise variance must be positive");
  if (noise.kind == NoiseModel::Kind::PerObservation) {
    if (noise.per_obs.size() != n)
      fail_design("per-observation noise vector length does not match the data");
    if ((noise.per_obs.array() <= 0).any())
      fail_design("per-observation noise variances must be positive");
  }

  // The rule is authoritative everywhere (it must also label grid nodes); an
  // observed indicator is only cross-checked for sharpness.
  std::vector<int> w_rule(static_cast<std::size_t>(n));
  std::string mismatches;
  int n_mismatch = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    w_rule[static_cast<std::size_t>(i)] = rule.treated(raw.x.row(i).transpose()) ? 1 : 0;
    if (w_observed && raw.w[i] != w_rule[static_cast<std::size_t>(i)]) {
      ++n_mismatch;
      if (n_mismatch <= 3) mismatches += " row " + std::to_string(i + 1) + ";";
    }
    if (raw.w[i] != 0 && raw.w[i] != 1) fail_design("treatment indicator must be 0 or 1");
  }
  if (n_mismatch > 0)
    fail_design("observed treatment disagrees with the assignment rule at " +
                std::to_string(n_mismatch) + " row(s):" + mismatches +
                " a deterministic design requires exact agreement");

  // Window filter.
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    if ((raw.x.row(i).transpose() - c).norm() <= window_radius) keep.push_back(i);
  if (keep.empty()) fail_design("window of radius " + std::to_string(window_radius) +
                                " retains no observations");

  // Merge duplicate running-variable points (exact coordinate equality),
  // preserving first-occurrence order.
  std::map<std::vector<double>, std::size_t> slot_of;
  struct Acc {
    double prec_sum = 0, prec_y = 0, cnt = 0, cnt_y = 0, ss = 0;
    Eigen::Index first = 0;
    int w = 0;
  };
  std::vector<Acc> acc;
  std::vector<Vec> zacc;
  const bool have_z = z.cols() > 0;
  for (Eigen::Index i : keep) {
    std::vector<double> key(raw.x.row(i).begin(), raw.x.row(i).end());
    auto [it, inserted] = slot_of.try_emplace(key, acc.size());
    if (inserted) {
      acc.emplace_back();
      acc.back().first = i;
      acc.back().w = w_rule[static_cast<std::size_t>(i)];
      if (have_z) zacc.push_back(Vec::Zero(z.cols()));
    }
    Acc& a = acc[it->second];
    const double cnt = raw.count[i];
    const double prec = noise.kind == NoiseModel::Kind::PerObservation
                            ? cnt / noise.per_obs[i]
                            : cnt;
    // Pool the mean first against the running precision-weighted mean so the
    // within-group spread ends up in ss.
    if (a.prec_sum > 0) {
      const double old_mean = a.cnt_y / a.cnt;
      const double delta = raw.y[i] - old_mean;
      a.ss += raw.ss[i] + delta * delta * (a.cnt * cnt) / (a.cnt + cnt);
    } else {
      a.ss += raw.ss[i];
    }
    a.prec_sum += prec;
    a.prec_y += prec * raw.y[i];
    a.cnt += cnt;
    a.cnt_y += cnt * raw.y[i];
    if (have_z) zacc[it->second] += cnt * z.row(i).transpose();
  }

  const Eigen::Index m = static_cast<Eigen::Index>(acc.size());
  DesignProblem out;
  out.data.dim = raw.dim;
  out.data.x.resize(m, raw.dim);
  out.data.y.resize(m);
  out.data.w.resize(m);
  out.data.count.resize(m);
  out.data.ss.resize(m);
  out.z.resize(m, have_z ? z.cols() : 0);
  Vec sig(m);
  bool want_sigma = noise.kind != NoiseModel::Kind::EstimateFromData;
  for (Eigen::Index s = 0; s < m; ++s) {
    const Acc& a = acc[static_cast<std::size_t>(s)];
    out.data.x.row(s) = raw.x.row(a.first);
    out.data.y[s] = a.prec_y / a.prec_sum;
    out.data.w[s] = a.w;
    out.data.count[s] = a.cnt;
    out.data.ss[s] = a.ss;
    if (have_z) out.z.row(s) = (zacc[static_cast<std::size_t>(s)] / a.cnt).transpose();
    if (want_sigma) sig[s] = 1.0 / a.prec_sum;  // variance of the merged mean
  }

  int n_treated = (out.data.w.array() == 1).count();
  int n_control = (out.data.w.array() == 0).count();
  if (n_treated == 0)
    fail_infeasible("no treated observations in the window: the unit-mass moment on the "
                    "treated arm cannot hold");
  if (n_control == 0)
    fail_infeasible("no control observations in the window: the unit-mass moment on the "
                    "control arm cannot hold");

  out.c = c;
  out.estimand = estimand;
  out.rule = rule;
  out.noise = noise;
  out.window_radius = window_radius;
  out.n_dropped = n - static_cast<Eigen::Index>(keep.size());
  if (want_sigma) out.sigma_sq = sig;
  return out;
}

inline DesignProblem validate_design(const Dataset& raw, const AssignmentRule& rule, const Vec& c,
                                     Estimand estimand, const NoiseModel& noise,
                                     double window_radius = kInf, bool w_observed = true) {
  return validate_design(raw, Mat(0, 0), rule, c, estimand, noise, window_radius, w_observed);
}

}  // namespace mmrd
