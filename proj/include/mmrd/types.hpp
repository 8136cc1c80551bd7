#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mmrd/errors.hpp"

namespace mmrd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using IntVec = Eigen::VectorXi;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Which jump the weights target.
///   PointwiseCate: the treatment effect at the focal point itself; both arm
///     regression functions are modelled separately (two curvature classes).
///   WeightedCate: a weighted average of effects at the treated support; only
///     the control-arm regression function is modelled (one curvature class
///     spanning all observations).
enum class Estimand { PointwiseCate, WeightedCate };

/// 1 when each arm carries its own curvature class, 0 when a single class
/// covers every observation.
inline int arm_split(Estimand e) { return e == Estimand::PointwiseCate ? 1 : 0; }

inline const char* to_string(Estimand e) {
  return e == Estimand::PointwiseCate ? "cate" : "wate";
}

/// Deterministic treatment assignment: w(x) is a fixed 0/1 function of the
/// running variable(s).  The rule must label arbitrary points (grid nodes as
/// well as observations), hence the functional form.
struct AssignmentRule {
  std::function<bool(const Eigen::Ref<const Vec>&)> member;

  bool treated(const Eigen::Ref<const Vec>& x) const { return member(x); }

  /// w = 1 iff x[axis] >= cutoff.
  static AssignmentRule threshold(double cutoff, int axis = 0) {
    return {[cutoff, axis](const Eigen::Ref<const Vec>& x) { return x[axis] >= cutoff; }};
  }
  /// w = 1 iff x[j] >= cutoff[j] for every axis j.
  static AssignmentRule all_at_or_above(Vec cutoffs) {
    return {[c = std::move(cutoffs)](const Eigen::Ref<const Vec>& x) {
      for (int j = 0; j < c.size(); ++j)
        if (x[j] < c[j]) return false;
      return true;
    }};
  }
  /// w = 1 iff x[j] < cutoff[j] for at least one axis j (e.g. "failed either test").
  static AssignmentRule any_below(Vec cutoffs) {
    return {[c = std::move(cutoffs)](const Eigen::Ref<const Vec>& x) {
      for (int j = 0; j < c.size(); ++j)
        if (x[j] < c[j]) return true;
      return false;
    }};
  }
  /// Arbitrary region membership.
  static AssignmentRule region(std::function<bool(const Eigen::Ref<const Vec>&)> fn) {
    return {std::move(fn)};
  }
};

/// How observation noise levels are obtained.
struct NoiseModel {
  enum class Kind { Homoskedastic, PerObservation, EstimateFromData };
  Kind kind = Kind::EstimateFromData;
  double sigma_sq = 0.0;  ///< Homoskedastic only
  Vec per_obs;            ///< PerObservation only, one raw-row variance each

  static NoiseModel homoskedastic(double s2) {
    return {Kind::Homoskedastic, s2, {}};
  }
  static NoiseModel per_observation(Vec s2) {
    return {Kind::PerObservation, 0.0, std::move(s2)};
  }
  static NoiseModel estimate() { return {}; }
};

/// Columnar sample: n rows of (x in R^k, y, w, count, ss).
///   count: replication multiplicity (>= 1); a row with count m stands for m
///     raw observations at the same x whose outcomes average to y.
///   ss: within-row sum of squared outcome deviations, retained when rows are
///     merged so that residual variance estimates match the raw sample.
struct Dataset {
  int dim = 1;
  Mat x;      // n x dim
  Vec y;      // n
  IntVec w;   // n, entries in {0,1}
  Vec count;  // n, >= 1
  Vec ss;     // n, >= 0

  Eigen::Index rows() const { return y.size(); }
  double total_count() const { return count.sum(); }
};

/// A validated, windowed, aggregated estimation problem.
struct DesignProblem {
  Dataset data;          ///< retained rows only, duplicates merged
  Mat z;                 ///< retained covariate rows for balance constraints (may be 0-col)
  Vec c;                 ///< focal point, length dim
  Estimand estimand = Estimand::PointwiseCate;
  AssignmentRule rule;   ///< needed later to label grid nodes
  NoiseModel noise;
  double window_radius = kInf;
  Eigen::Index n_dropped = 0;  ///< raw rows outside the window
  Vec sigma_sq;          ///< per retained row; empty until materialized for EstimateFromData

  bool has_sigma() const { return sigma_sq.size() == data.rows(); }
};

}  // namespace mmrd
