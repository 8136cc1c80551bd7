#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmrd/types.hpp"

namespace mmrd {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Convex quadratic program
///   minimize   0.5 x' P x + q' x + obj_const
///   subject to l <= A x <= u        (entries may be +/-inf; l == u is an equality)
/// P must be symmetric positive semidefinite and stored in full.
struct QuadraticProgram {
  SpMat P;
  Vec q;
  SpMat A;
  Vec l, u;
  double obj_const = 0.0;

  Eigen::Index num_vars() const { return q.size(); }
  Eigen::Index num_rows() const { return l.size(); }
};

enum class SolveStatus { Optimal, MaxIterations, PrimalInfeasible, DualInfeasible };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::MaxIterations: return "max-iter";
    case SolveStatus::PrimalInfeasible: return "primal-infeasible";
    case SolveStatus::DualInfeasible: return "dual-infeasible";
  }
  return "unknown";
}

struct SolverSettings {
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  long max_iterations = 200000;
  double rho = 0.1;          ///< initial step size for the constraint splitting
  double sigma = 1e-6;       ///< primal regularization keeping the KKT system quasi-definite
  double relax_alpha = 1.6;  ///< over-relaxation
  bool scaling = true;       ///< modified Ruiz equilibration
  int scaling_iterations = 10;
  bool adaptive_rho = true;
  bool polish = true;
  int check_every = 25;      ///< termination test cadence (iterations)
  double eps_infeasible = 1e-9;
  double polish_delta = 1e-6;  ///< regularization of the polish KKT system
};

struct SolveResult {
  Vec x;       ///< primal solution
  Vec y;       ///< dual solution for the rows of A (positive at upper bounds)
  Vec z;       ///< A x at the solution
  SolveStatus status = SolveStatus::MaxIterations;
  long iterations = 0;
  double objective = kInf;
  double primal_residual = kInf;
  double dual_residual = kInf;
  bool polished = false;
};

namespace detail {

inline double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// KKT factorization of [[P + sigma I, A'], [A, -diag(1/rho_i)]].  The matrix
/// is quasi-definite, so an LDL' factorization without numeric pivoting
/// exists; if the ordering still trips a zero pivot, sigma is inflated.
class KktSolver {
 public:
  bool factor(const SpMat& P, const SpMat& A, double sigma, const Vec& rho_inv) {
    const Eigen::Index n = P.rows(), m = A.rows();
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(P.nonZeros() + 2 * A.nonZeros() + n + m));
    for (int k = 0; k < P.outerSize(); ++k)
      for (SpMat::InnerIterator it(P, k); it; ++it)
        t.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (Eigen::Index i = 0; i < n; ++i)
      t.emplace_back(static_cast<int>(i), static_cast<int>(i), sigma);
    for (int k = 0; k < A.outerSize(); ++k)
      for (SpMat::InnerIterator it(A, k); it; ++it) {
        t.emplace_back(static_cast<int>(n + it.row()), static_cast<int>(it.col()), it.value());
        t.emplace_back(static_cast<int>(it.col()), static_cast<int>(n + it.row()), it.value());
      }
    for (Eigen::Index i = 0; i < m; ++i)
      t.emplace_back(static_cast<int>(n + i), static_cast<int>(n + i), -rho_inv[i]);
    SpMat K(n + m, n + m);
    K.setFromTriplets(t.begin(), t.end());
    ldlt_.compute(K);
    return ldlt_.info() == Eigen::Success;
  }
  Vec solve(const Vec& rhs) const { return ldlt_.solve(rhs); }

 private:
  Eigen::SimplicialLDLT<SpMat> ldlt_;
};

struct Scaling {
  Vec d;          // variable scaling, x = d .* x_scaled
  Vec e;          // row scaling
  double cost = 1.0;
};

/// Modified Ruiz equilibration of [[P, A'], [A, 0]] plus a cost normalization.
inline Scaling ruiz_equilibrate(SpMat& P, Vec& q, SpMat& A, Vec& l, Vec& u, int iterations) {
  const Eigen::Index n = P.rows(), m = A.rows();
  Scaling s;
  s.d = Vec::Ones(n);
  s.e = Vec::Ones(m);
  auto clamp_scale = [](double v) { return std::clamp(v, 1e-4, 1e4); };
  for (int it = 0; it < iterations; ++it) {
    Vec dcol = Vec::Zero(n), erow = Vec::Zero(m);
    for (int k = 0; k < P.outerSize(); ++k)
      for (SpMat::InnerIterator itP(P, k); itP; ++itP)
        dcol[itP.col()] = std::max(dcol[itP.col()], std::abs(itP.value()));
    for (int k = 0; k < A.outerSize(); ++k)
      for (SpMat::InnerIterator itA(A, k); itA; ++itA) {
        dcol[itA.col()] = std::max(dcol[itA.col()], std::abs(itA.value()));
        erow[itA.row()] = std::max(erow[itA.row()], std::abs(itA.value()));
      }
    Vec dv(n), ev(m);
    for (Eigen::Index i = 0; i < n; ++i)
      dv[i] = dcol[i] > 0 ? clamp_scale(1.0 / std::sqrt(dcol[i])) : 1.0;
    for (Eigen::Index i = 0; i < m; ++i)
      ev[i] = erow[i] > 0 ? clamp_scale(1.0 / std::sqrt(erow[i])) : 1.0;
    P = dv.asDiagonal() * P * dv.asDiagonal();
    q = dv.asDiagonal() * q;
    A = ev.asDiagonal() * A * dv.asDiagonal();
    s.d = s.d.cwiseProduct(dv);
    s.e = s.e.cwiseProduct(ev);
    // Cost scaling: bring the objective's row norms toward unity.
    double pmean = 0;
    Vec pcol = Vec::Zero(n);
    for (int k = 0; k < P.outerSize(); ++k)
      for (SpMat::InnerIterator itP(P, k); itP; ++itP)
        pcol[itP.col()] = std::max(pcol[itP.col()], std::abs(itP.value()));
    pmean = n ? pcol.sum() / static_cast<double>(n) : 0.0;
    const double qn = inf_norm(q);
    const double denom = std::max(pmean, qn);
    if (denom > 0) {
      const double g = clamp_scale(1.0 / denom);
      P *= g;
      q *= g;
      s.cost *= g;
    }
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::isfinite(l[i])) l[i] *= s.e[i];
    if (std::isfinite(u[i])) u[i] *= s.e[i];
  }
  return s;
}

/// Newton refinement over a guessed active set.  Each round solves the
/// equality KKT system of the pinned rows exactly, releases pins whose
/// multiplier comes back with the wrong sign, and pins rows the trial point
/// violates.  `res` must carry an (unscaled) candidate x, y and residuals; on
/// acceptance it is overwritten and `true` returned.  Every round's trial
/// point is checked against feasibility, stationarity, and objective gates,
/// and the best gate-passing candidate is kept; a self-consistent pin set
/// merely ends the search early.
inline bool polish_kkt(const QuadraticProgram& prob, const SolverSettings& settings,
                       SolveResult& res) {
  const Eigen::Index n = prob.num_vars(), m = prob.num_rows();
  if (m == 0) return false;
  // Row-wise view of A and the P-block triplets, reused across rounds.
  std::vector<std::vector<std::pair<Eigen::Index, double>>> arows(static_cast<std::size_t>(m));
  for (int k = 0; k < prob.A.outerSize(); ++k)
    for (SpMat::InnerIterator it(prob.A, k); it; ++it)
      arows[static_cast<std::size_t>(it.row())].emplace_back(it.col(), it.value());
  std::vector<Triplet> pt;
  for (int k = 0; k < prob.P.outerSize(); ++k)
    for (SpMat::InnerIterator it(prob.P, k); it; ++it)
      pt.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());

  // -2 free, 0 equality (never released), -1/+1 pinned at lower/upper.
  std::vector<int> side(static_cast<std::size_t>(m), -2);
  // A converged multiplier on an inactive row is round-off of arbitrary
  // sign, so the initial pin guess needs a threshold, not just the sign
  // bit; the rounds below repair what the guess gets wrong.
  const double act_tol = 1e-6 * std::max(1.0, inf_norm(res.y));
  for (Eigen::Index i = 0; i < m; ++i) {
    const bool eq =
        std::isfinite(prob.l[i]) && std::isfinite(prob.u[i]) && prob.u[i] - prob.l[i] < 1e-14;
    if (eq)
      side[static_cast<std::size_t>(i)] = 0;
    else if (res.y[i] < -act_tol && std::isfinite(prob.l[i]))
      side[static_cast<std::size_t>(i)] = -1;
    else if (res.y[i] > act_tol && std::isfinite(prob.u[i]))
      side[static_cast<std::size_t>(i)] = 1;
  }
  auto bound_slack = [](double b) { return std::max(1e-9, 1e-9 * std::abs(b)); };

  Vec xp, yp, Axp;
  // Degenerate faces can make the pin corrections cycle between two sets
  // without ever becoming self-consistent, so acceptance cannot hinge on
  // consistency: each round's candidate is gate-checked on its own and the
  // one with the smallest max residual wins.
  const double f_pre = 0.5 * res.x.dot(prob.P * res.x) + prob.q.dot(res.x);
  const double rp_gate = std::max(res.primal_residual, settings.eps_abs);
  const double rd_gate = std::max(res.dual_residual, settings.eps_abs);
  Vec best_x, best_y, best_z;
  double best_rp = 0, best_rd = 0, best_score = kInf;
  // When the joint update revisits a pin set (a cycle, typical of weakly
  // active dependent rows), fall back to changing one pin per round: pin the
  // worst violated row while infeasible, otherwise release the worst
  // wrong-sign pin.  Signatures of visited sets detect the cycles.
  std::vector<std::uint64_t> seen;
  bool serial = false;
  Eigen::Index last_released = -1;
  bool consistent = false;
  for (int round = 0; round < 52 && !consistent; ++round) {
    std::uint64_t sig = 1469598103934665603ull;
    for (int s : side) {
      sig ^= static_cast<std::uint64_t>(s + 2);
      sig *= 1099511628211ull;
    }
    if (std::find(seen.begin(), seen.end(), sig) != seen.end()) {
      if (serial) break;  // cycling even one pin at a time: give up
      serial = true;
    } else {
      seen.push_back(sig);
    }
    if (!serial && round >= 12) break;
    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < m; ++i)
      if (side[static_cast<std::size_t>(i)] != -2) act.push_back(i);
    const Eigen::Index ma = static_cast<Eigen::Index>(act.size());
    std::vector<Triplet> t = pt;
    for (Eigen::Index r = 0; r < ma; ++r)
      for (const auto& [col, val] : arows[static_cast<std::size_t>(act[r])]) {
        t.emplace_back(static_cast<int>(n + r), static_cast<int>(col), val);
        t.emplace_back(static_cast<int>(col), static_cast<int>(n + r), val);
      }
    // The unpivoted factorization can break down when delta is small next
    // to the system's own scale, so escalate it; iterative refinement
    // against the unregularized system removes the perturbation afterwards.
    double delta = settings.polish_delta;
    Eigen::SimplicialLDLT<SpMat> ldlt;
    for (int attempt = 0; attempt < 3; ++attempt, delta *= 1e3) {
      std::vector<Triplet> treg = t;
      for (Eigen::Index i = 0; i < n; ++i)
        treg.emplace_back(static_cast<int>(i), static_cast<int>(i), delta);
      for (Eigen::Index r = 0; r < ma; ++r)
        treg.emplace_back(static_cast<int>(n + r), static_cast<int>(n + r), -delta);
      SpMat K(n + ma, n + ma);
      K.setFromTriplets(treg.begin(), treg.end());
      ldlt.compute(K);
      if (ldlt.info() == Eigen::Success) break;
    }
    if (ldlt.info() != Eigen::Success) break;
    Vec rhs_p(n + ma);
    rhs_p.head(n) = -prob.q;
    for (Eigen::Index r = 0; r < ma; ++r)
      rhs_p[n + r] =
          side[static_cast<std::size_t>(act[r])] == -1 ? prob.l[act[r]] : prob.u[act[r]];
    Vec sol = ldlt.solve(rhs_p);
    // Refine against the unregularized system until the residual bottoms
    // out; the contraction per sweep is ~delta/sigma_min, so a fixed small
    // sweep count is not enough when P carries near-delta diagonal entries.
    const double rhs_scale = std::max(1.0, inf_norm(rhs_p));
    Vec best_sol = sol;
    double best_res = std::numeric_limits<double>::infinity();
    for (int refine = 0; refine < 30; ++refine) {
      Vec resid = rhs_p;
      // resid -= K_exact * sol, where K_exact drops the delta regularization.
      resid.head(n) -= prob.P * sol.head(n);
      for (Eigen::Index r = 0; r < ma; ++r)
        for (const auto& [col, val] : arows[static_cast<std::size_t>(act[r])]) {
          resid[n + r] -= val * sol[col];
          resid[col] -= val * sol[n + r];
        }
      const double rn = inf_norm(resid);
      if (rn < best_res) {
        best_res = rn;
        best_sol = sol;
      } else if (rn > 2.0 * best_res) {
        break;  // near-singular pinned set: the sweeps are diverging
      }
      if (rn <= 1e-13 * rhs_scale) break;
      sol += ldlt.solve(resid);
    }
    sol = best_sol;
    xp = sol.head(n);
    yp = Vec::Zero(m);
    for (Eigen::Index r = 0; r < ma; ++r) yp[act[r]] = sol[n + r];
    Axp = prob.A * xp;

    // Gate check for this round's candidate.  A wrong-sign multiplier on a
    // pinned inequality means the pin set is wrong, and the subproblem's
    // stationarity can look perfect anyway; zeroing the wrong-sign mass
    // before measuring the dual residual turns it into the honest KKT gap
    // of the original problem, so acceptance certifies optimality on its
    // own.  Tiny wrong signs on degenerate weakly active rows clip away
    // without moving the residual.
    Vec yc = yp;
    for (Eigen::Index r = 0; r < ma; ++r) {
      const int sd = side[static_cast<std::size_t>(act[r])];
      if (sd == -1)
        yc[act[r]] = std::min(yp[act[r]], 0.0);
      else if (sd == 1)
        yc[act[r]] = std::max(yp[act[r]], 0.0);
    }
    bool in_bounds = true;
    double rp = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::isfinite(prob.l[i])) {
        rp = std::max(rp, prob.l[i] - Axp[i]);
        if (Axp[i] < prob.l[i] - bound_slack(prob.l[i])) in_bounds = false;
      }
      if (std::isfinite(prob.u[i])) {
        rp = std::max(rp, Axp[i] - prob.u[i]);
        if (Axp[i] > prob.u[i] + bound_slack(prob.u[i])) in_bounds = false;
      }
    }
    const double rd = inf_norm(prob.P * xp + prob.q + prob.A.transpose() * yc);
    const double f_pol = 0.5 * xp.dot(prob.P * xp) + prob.q.dot(xp);
    const bool no_worse =
        f_pol <= f_pre + std::max(settings.eps_abs, 1e-9 * (1.0 + std::abs(f_pre)));
    if (in_bounds && no_worse && rp <= rp_gate && rd <= rd_gate &&
        std::max(rp, rd) < best_score) {
      best_score = std::max(rp, rd);
      best_x = xp;
      best_y = yc;
      best_z = Axp;
      best_rp = rp;
      best_rd = rd;
    }

    // Active-set corrections; sign_tol tracks the polish accuracy, not the
    // looser splitting tolerance, so noise pins do get released.
    const double sign_tol = std::max(1e-9, 1e-9 * inf_norm(yp));
    bool changed = false;
    if (!serial) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const std::size_t is = static_cast<std::size_t>(i);
        if (side[is] == -1 && yp[i] > sign_tol) {
          side[is] = -2;
          changed = true;
        } else if (side[is] == 1 && yp[i] < -sign_tol) {
          side[is] = -2;
          changed = true;
        } else if (side[is] == -2) {
          if (std::isfinite(prob.l[i]) && Axp[i] < prob.l[i] - bound_slack(prob.l[i])) {
            side[is] = -1;
            changed = true;
          } else if (std::isfinite(prob.u[i]) && Axp[i] > prob.u[i] + bound_slack(prob.u[i])) {
            side[is] = 1;
            changed = true;
          }
        }
      }
    } else {
      Eigen::Index pin = -1, rel = -1;
      int pin_side = 0;
      double pin_mag = 0, rel_mag = sign_tol;
      for (Eigen::Index i = 0; i < m; ++i) {
        const std::size_t is = static_cast<std::size_t>(i);
        if (side[is] == -1 && yp[i] > rel_mag) {
          rel_mag = yp[i];
          rel = i;
        } else if (side[is] == 1 && -yp[i] > rel_mag) {
          rel_mag = -yp[i];
          rel = i;
        } else if (side[is] == -2) {
          const double lv = std::isfinite(prob.l[i]) ? prob.l[i] - Axp[i] : 0.0;
          const double uv = std::isfinite(prob.u[i]) ? Axp[i] - prob.u[i] : 0.0;
          const double v = std::max(lv, uv);
          if (v > std::max(pin_mag, bound_slack(lv >= uv ? prob.l[i] : prob.u[i])) &&
              i != last_released) {
            pin_mag = v;
            pin = i;
            pin_side = lv >= uv ? -1 : 1;
          }
        }
      }
      if (pin != -1) {
        side[static_cast<std::size_t>(pin)] = pin_side;
        last_released = -1;
        changed = true;
      } else if (rel != -1) {
        side[static_cast<std::size_t>(rel)] = -2;
        last_released = rel;
        changed = true;
      }
    }
    consistent = !changed;
  }
  if (best_score < kInf) {
    res.x = std::move(best_x);
    res.y = std::move(best_y);
    res.z = std::move(best_z);
    res.primal_residual = best_rp;
    res.dual_residual = best_rd;
    res.polished = true;
    return true;
  }
  return false;
}

}  // namespace detail

/// First-order operator-splitting solver with an active-set KKT polishing
/// pass.  Deterministic: fixed iteration order, no randomized components.
inline SolveResult solve_qp(const QuadraticProgram& prob, const SolverSettings& settings = {}) {
  const Eigen::Index n = prob.num_vars(), m = prob.num_rows();
  if (prob.P.rows() != n || prob.P.cols() != n || prob.A.cols() != n || prob.A.rows() != m ||
      prob.u.size() != m)
    fail_solver("quadratic program dimensions are inconsistent");
  for (Eigen::Index i = 0; i < m; ++i)
    if (prob.l[i] > prob.u[i])
      fail_infeasible("constraint row " + std::to_string(i) + " has empty interval [l, u]");

  // Scaled working copies.
  SpMat P = prob.P, A = prob.A;
  Vec q = prob.q, l = prob.l, u = prob.u;
  detail::Scaling sc;
  if (settings.scaling) {
    sc = detail::ruiz_equilibrate(P, q, A, l, u, settings.scaling_iterations);
  } else {
    sc.d = Vec::Ones(n);
    sc.e = Vec::Ones(m);
  }

  // Per-row step sizes: equalities get a stiffer step.
  double rho_bar = settings.rho;
  auto make_rho = [&](double base) {
    Vec r(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const bool eq = std::isfinite(l[i]) && std::isfinite(u[i]) && (u[i] - l[i]) < 1e-14;
      r[i] = eq ? base * 1e3 : base;
    }
    return r;
  };
  Vec rho = make_rho(rho_bar);
  Vec rho_inv = rho.cwiseInverse();

  detail::KktSolver kkt;
  double sigma = settings.sigma;
  for (int attempt = 0; attempt < 6 && !kkt.factor(P, A, sigma, rho_inv); ++attempt) {
    sigma *= 100;
    if (attempt == 5) fail_solver("KKT factorization failed after regularization");
  }

  Vec x = Vec::Zero(n), z = Vec::Zero(m), y = Vec::Zero(m);
  for (Eigen::Index i = 0; i < m; ++i) z[i] = std::clamp(0.0, l[i], u[i]);

  SolveResult res;
  const double alpha = settings.relax_alpha;
  long next_rho_update = 100;
  long next_polish_try = 0;
  int polish_tries = 0;
  bool finished_early = false;

  auto unscaled_x = [&](const Vec& xs) { return Vec(sc.d.cwiseProduct(xs)); };
  auto unscaled_y = [&](const Vec& ys) { return Vec(sc.e.cwiseProduct(ys) / sc.cost); };
  auto unscaled_z = [&](const Vec& zs) { return Vec(zs.cwiseQuotient(sc.e)); };

  Vec rhs(n + m), xz(n + m);
  for (long iter = 1; iter <= settings.max_iterations; ++iter) {
    rhs.head(n) = sigma * x - q;
    rhs.tail(m) = z - rho_inv.cwiseProduct(y);
    xz = kkt.solve(rhs);
    const Vec x_tilde = xz.head(n);
    const Vec nu = xz.tail(m);
    const Vec z_tilde = z + rho_inv.cwiseProduct(nu - y);

    const Vec x_next = alpha * x_tilde + (1 - alpha) * x;
    const Vec z_relax = alpha * z_tilde + (1 - alpha) * z;
    Vec z_next(m);
    for (Eigen::Index i = 0; i < m; ++i)
      z_next[i] = std::clamp(z_relax[i] + rho_inv[i] * y[i], l[i], u[i]);
    const Vec y_next = y + rho.cwiseProduct(z_relax - z_next);

    const Vec dx = x_next - x;
    const Vec dy = y_next - y;
    x = x_next;
    z = z_next;
    y = y_next;

    if (iter % settings.check_every == 0 || iter == settings.max_iterations) {
      // Termination is judged on the original (unscaled) problem.
      const Vec xu = unscaled_x(x), yu = unscaled_y(y), zu = unscaled_z(z);
      const Vec Axu = prob.A * xu;
      const Vec Pxu = prob.P * xu;
      const Vec Atyu = prob.A.transpose() * yu;
      const double rp = detail::inf_norm(Axu - zu);
      const double rd = detail::inf_norm(Pxu + prob.q + Atyu);
      const double np = std::max(detail::inf_norm(Axu), detail::inf_norm(zu));
      const double nd = std::max({detail::inf_norm(Pxu), detail::inf_norm(Atyu),
                                  detail::inf_norm(prob.q)});
      const double ep = settings.eps_abs + settings.eps_rel * np;
      const double ed = settings.eps_abs + settings.eps_rel * nd;
      res.primal_residual = rp;
      res.dual_residual = rd;
      res.iterations = iter;
      if (rp <= ep && rd <= ed) {
        res.status = SolveStatus::Optimal;
        break;
      }

      // Once the iterate is roughly converged, try to finish with the exact
      // active-set polish: it usually lands the solution long before the
      // splitting alone can certify tight tolerances.
      if (settings.polish && polish_tries < 6 && iter >= next_polish_try &&
          rp <= 1e-3 * (1.0 + np) && rd <= 1e-3 * (1.0 + nd)) {
        res.x = xu;
        res.y = yu;
        res.z = zu;
        if (detail::polish_kkt(prob, settings, res)) {
          const double npp = std::max(detail::inf_norm(res.z), detail::inf_norm(prob.A * res.x));
          const double ndp = std::max({detail::inf_norm(prob.P * res.x),
                                       detail::inf_norm(prob.A.transpose() * res.y),
                                       detail::inf_norm(prob.q)});
          if (res.primal_residual <= settings.eps_abs + settings.eps_rel * npp &&
              res.dual_residual <= settings.eps_abs + settings.eps_rel * ndp) {
            res.status = SolveStatus::Optimal;
            finished_early = true;
            break;
          }
        }
        res.polished = false;
        ++polish_tries;
        next_polish_try = iter + (500L << polish_tries);
      }

      // Infeasibility certificates from the iterate increments.
      const Vec dyu = unscaled_y(dy);
      const double dyn = detail::inf_norm(dyu);
      if (dyn > settings.eps_infeasible) {
        bool cert = detail::inf_norm(prob.A.transpose() * dyu) <= settings.eps_infeasible * dyn;
        double support = 0;
        for (Eigen::Index i = 0; i < m && cert; ++i) {
          const double dp = std::max(dyu[i], 0.0), dn = std::min(dyu[i], 0.0);
          if (dp > settings.eps_infeasible * dyn && !std::isfinite(prob.u[i])) cert = false;
          if (-dn > settings.eps_infeasible * dyn && !std::isfinite(prob.l[i])) cert = false;
          if (cert)
            support += (std::isfinite(prob.u[i]) ? prob.u[i] * dp : 0.0) +
                       (std::isfinite(prob.l[i]) ? prob.l[i] * dn : 0.0);
        }
        if (cert && support <= -settings.eps_infeasible * dyn) {
          res.status = SolveStatus::PrimalInfeasible;
          res.iterations = iter;
          return res;
        }
      }
      const Vec dxu = sc.d.cwiseProduct(dx);
      const double dxn = detail::inf_norm(dxu);
      if (dxn > settings.eps_infeasible) {
        bool cert = detail::inf_norm(prob.P * dxu) <= settings.eps_infeasible * dxn &&
                    prob.q.dot(dxu) <= -settings.eps_infeasible * dxn;
        if (cert) {
          const Vec Adx = prob.A * dxu;
          for (Eigen::Index i = 0; i < m && cert; ++i) {
            const bool lf = std::isfinite(prob.l[i]), uf = std::isfinite(prob.u[i]);
            const double tol = settings.eps_infeasible * dxn;
            if (lf && uf) cert = std::abs(Adx[i]) <= tol;
            else if (uf) cert = Adx[i] <= tol;
            else if (lf) cert = Adx[i] >= -tol;
          }
          if (cert) {
            res.status = SolveStatus::DualInfeasible;
            res.iterations = iter;
            return res;
          }
        }
      }

      // Step-size adaptation from the same unscaled residual balance that
      // drives termination, so a persistent imbalance always moves rho.  The
      // spacing between updates doubles so the step size is eventually held
      // fixed, which the splitting needs in order to converge at all.
      if (settings.adaptive_rho && iter >= next_rho_update) {
        const double sp = rp / std::max(np, 1e-12);
        const double sd = rd / std::max(nd, 1e-12);
        const double ratio = std::sqrt(sp / std::max(sd, 1e-16));
        if (ratio > 1.5 || ratio < 1.0 / 1.5) {
          rho_bar = std::clamp(rho_bar * ratio, 1e-6, 1e6);
          rho = make_rho(rho_bar);
          rho_inv = rho.cwiseInverse();
          if (!kkt.factor(P, A, sigma, rho_inv))
            fail_solver("KKT refactorization failed during step adaptation");
          next_rho_update = iter + std::max<long>(100, iter);
        }
      }
    }
  }
  if (res.status != SolveStatus::Optimal && res.iterations == 0)
    res.iterations = settings.max_iterations;

  if (!finished_early) {
    res.x = unscaled_x(x);
    res.y = unscaled_y(y);
    res.z = unscaled_z(z);
    if (settings.polish && res.status == SolveStatus::Optimal)
      detail::polish_kkt(prob, settings, res);
  }

  res.objective = 0.5 * res.x.dot(prob.P * res.x) + prob.q.dot(res.x) + prob.obj_const;
  return res;
}

}  // namespace mmrd
