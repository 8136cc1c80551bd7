#pragma once

#include <string>
#include <vector>

#include "mmrd/qp.hpp"
#include "mmrd/types.hpp"

namespace mmrd {

/// Appends the equality rows sum_i gamma_i Z_ij = 0 (one per covariate
/// column) to a program in which the weights occupy a contiguous variable
/// block starting at gamma_offset — i.e. the primal form.  The dual builder
/// takes the covariates directly and grows its multiplier block instead.
inline QuadraticProgram add_balance_constraints(QuadraticProgram qp, const Mat& z,
                                                Eigen::Index gamma_offset = 0) {
  const Eigen::Index n = z.rows(), p = z.cols();
  if (gamma_offset + n > qp.num_vars())
    fail_design("balance covariates do not fit the program's weight block");
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(qp.A.nonZeros() + z.size()));
  for (int k = 0; k < qp.A.outerSize(); ++k)
    for (SpMat::InnerIterator it(qp.A, k); it; ++it)
      t.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  const Eigen::Index m0 = qp.num_rows();
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (z(i, j) != 0)
        t.emplace_back(static_cast<int>(m0 + j), static_cast<int>(gamma_offset + i), z(i, j));
  SpMat A(m0 + p, qp.num_vars());
  A.setFromTriplets(t.begin(), t.end());
  qp.A = std::move(A);
  qp.l.conservativeResize(m0 + p);
  qp.u.conservativeResize(m0 + p);
  qp.l.tail(p).setZero();
  qp.u.tail(p).setZero();
  return qp;
}

/// Ratio estimate for designs where eligibility only shifts takeup: weighted
/// outcome jump over weighted takeup jump.  The weights come from the sharp
/// program on the eligibility rule; takeup is the observed treatment.
inline double fuzzy_late(const Vec& gamma, const Vec& y, const Vec& observed_takeup,
                         double min_first_stage = 0.05) {
  if (gamma.size() != y.size() || gamma.size() != observed_takeup.size())
    fail_design("fuzzy ratio inputs have inconsistent lengths");
  const double first_stage = gamma.dot(observed_takeup);
  if (std::abs(first_stage) < min_first_stage)
    fail_design("weighted takeup jump " + std::to_string(first_stage) +
                " is below the identification threshold " + std::to_string(min_first_stage));
  return gamma.dot(y) / first_stage;
}

}  // namespace mmrd
