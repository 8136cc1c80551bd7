#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "mmrd/design.hpp"
#include "mmrd/inference.hpp"

using namespace mmrd;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

Dataset make_dataset(std::vector<double> x, std::vector<int> w, std::vector<double> y) {
  Dataset d;
  d.dim = 1;
  const Eigen::Index n = static_cast<Eigen::Index>(x.size());
  d.x.resize(n, 1);
  d.y.resize(n);
  d.w.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.x(i, 0) = x[static_cast<std::size_t>(i)];
    d.y[i] = y[static_cast<std::size_t>(i)];
    d.w[i] = w[static_cast<std::size_t>(i)];
  }
  d.count = Vec::Ones(n);
  d.ss = Vec::Zero(n);
  return d;
}

bool has_warning(const InferenceReport& rep, const std::string& needle) {
  for (const auto& w : rep.warnings)
    if (w.find(needle) != std::string::npos) return true;
  return false;
}

// Saturated four-point design: the moment constraints force
// gamma = (1, -2, 2, -1), so every downstream quantity is closed-form.
DesignProblem forced_problem(double sigma_sq = 1.0) {
  Dataset d = make_dataset({-2, -1, 1, 2}, {0, 0, 1, 1}, {0.0, 0.0, 1.0, 1.0});
  Vec c(1);
  c << 0;
  return validate_design(d, AssignmentRule::threshold(0.0), c, Estimand::PointwiseCate,
                         NoiseModel::homoskedastic(sigma_sq));
}

}  // namespace

TEST_CASE("normal quantile inverts the normal cdf") {
  CHECK(normal_quantile(0.975) == Approx(1.959963985).epsilon(1e-7));
  CHECK(normal_quantile(0.95) == Approx(1.644853627).epsilon(1e-7));
  CHECK(normal_quantile(0.5) == Approx(0.0).margin(1e-9));
  CHECK(normal_cdf(normal_quantile(0.31)) == Approx(0.31).margin(1e-9));
  CHECK_THROWS_AS(normal_quantile(0.0), Error);
  CHECK_THROWS_AS(normal_quantile(1.0), Error);
}

TEST_CASE("bias-adjusted critical values match the coverage equation") {
  // Zero bias reduces to the usual two-sided quantile.
  CHECK(bias_adjusted_critical_value(0.0, 0.05) == Approx(1.959964).margin(1e-3));
  // Half a standard error of bias.
  CHECK(bias_adjusted_critical_value(0.5, 0.05) == Approx(2.18).margin(0.01));
  // Large bias: the interval behaves one-sided, cv ~ ratio + z_{1-alpha}.
  const double cv10 = bias_adjusted_critical_value(10.0, 0.05);
  CHECK(cv10 >= 11.64);
  CHECK(cv10 <= 11.65);

  // The returned value solves Phi(cv - r) - Phi(-cv - r) = 1 - alpha.
  for (double r : {0.0, 0.3, 1.0, 2.5, 6.0}) {
    for (double alpha : {0.01, 0.05, 0.32}) {
      const double cv = bias_adjusted_critical_value(r, alpha);
      CHECK(normal_cdf(cv - r) - normal_cdf(-cv - r) == Approx(1.0 - alpha).margin(1e-7));
    }
  }

  // Monotone in the ratio, and the one-sided gap shrinks toward z_{1-alpha}.
  const double z95 = normal_quantile(0.95);
  double prev = bias_adjusted_critical_value(0.0, 0.05);
  double prev_gap = prev;
  for (double r : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double cv = bias_adjusted_critical_value(r, 0.05);
    CHECK(cv > prev);
    const double gap = cv - r;
    CHECK(gap < prev_gap);
    CHECK(gap > z95);
    prev = cv;
    prev_gap = gap;
  }

  CHECK_THROWS_AS(bias_adjusted_critical_value(-0.1, 0.05), Error);
  CHECK_THROWS_AS(bias_adjusted_critical_value(0.5, 0.0), Error);
  CHECK_THROWS_AS(bias_adjusted_critical_value(0.5, 1.0), Error);
}

TEST_CASE("bias-aware halfwidth scales the critical value by the standard error") {
  CHECK(bias_aware_halfwidth(0.2, 0.1, 0.05) ==
        Approx(0.1 * bias_adjusted_critical_value(2.0, 0.05)).epsilon(1e-12));
  // Never below the no-bias interval, never above bias + two-sided quantile.
  const double z975 = normal_quantile(0.975);
  double prev = 0;
  for (double t : {0.0, 0.05, 0.2, 1.0, 3.0}) {
    const double h = bias_aware_halfwidth(t, 0.5, 0.05);
    CHECK(h >= 0.5 * z975 - 1e-9);
    CHECK(h <= t + 0.5 * z975 + 1e-9);
    CHECK(h > prev - 1e-12);  // monotone in the bias bound
    prev = h;
  }
  CHECK_THROWS_AS(bias_aware_halfwidth(0.1, 0.0, 0.05), Error);
  CHECK_THROWS_AS(bias_aware_halfwidth(-0.1, 1.0, 0.05), Error);
}

TEST_CASE("residual regression recovers the off-line deviation exactly") {
  // On three equally spaced points the pattern (e, -2e, e) is orthogonal to
  // {1, x}, so it survives the arm-wise linear fit as the exact residual.
  const double ec = 0.1, et = 0.2;
  std::vector<double> x = {-3, -2, -1, 1, 2, 3};
  std::vector<int> w = {0, 0, 0, 1, 1, 1};
  std::vector<double> y(6);
  for (int i = 0; i < 3; ++i) y[static_cast<std::size_t>(i)] = 1.0 + 0.5 * x[static_cast<std::size_t>(i)];
  for (int i = 3; i < 6; ++i) y[static_cast<std::size_t>(i)] = 2.0 - 0.25 * x[static_cast<std::size_t>(i)];
  const double pc[3] = {ec, -2 * ec, ec};
  const double pt[3] = {et, -2 * et, et};
  for (int i = 0; i < 3; ++i) {
    y[static_cast<std::size_t>(i)] += pc[i];
    y[static_cast<std::size_t>(i + 3)] += pt[i];
  }
  Dataset d = make_dataset(x, w, y);
  Vec c(1);
  c << 0;

  SigmaEstimate s = estimate_sigma(d, c);
  for (int i = 0; i < 3; ++i) {
    CHECK(s.resid[i] == Approx(pc[i]).margin(1e-12));
    CHECK(s.resid[i + 3] == Approx(pt[i]).margin(1e-12));
  }
  CHECK((d.y - s.mu_hat - s.resid).cwiseAbs().maxCoeff() == Approx(0.0).margin(1e-14));
  // RSS = 6 ec^2 + 6 et^2 over N - p = 6 - 4 degrees of freedom.
  CHECK(s.raw_sigma_sq == Approx(3.0 * (ec * ec + et * et)).epsilon(1e-10));
  CHECK(s.sigma_sq == Approx(s.raw_sigma_sq).epsilon(1e-12));
  CHECK(s.floor == Approx(1e-12 * s.var_y).epsilon(1e-12));
}

TEST_CASE("residual regression treats merged cells like their raw expansion") {
  std::vector<double> xe = {-3, -2, -2, -1, 1, 2, 3};
  std::vector<int> we = {0, 0, 0, 0, 1, 1, 1};
  std::vector<double> ye = {0.4, 1.1, 0.5, 1.9, 0.7, 0.2, 1.3};
  Dataset expanded = make_dataset(xe, we, ye);

  Dataset merged = make_dataset({-3, -2, -1, 1, 2, 3}, {0, 0, 0, 1, 1, 1},
                                {0.4, 0.8, 1.9, 0.7, 0.2, 1.3});
  merged.count[1] = 2.0;
  merged.ss[1] = 2.0 * 0.3 * 0.3;  // spread of {1.1, 0.5} about 0.8
  Vec c(1);
  c << 0;

  SigmaEstimate a = estimate_sigma(expanded, c);
  SigmaEstimate b = estimate_sigma(merged, c);
  CHECK(b.raw_sigma_sq == Approx(a.raw_sigma_sq).epsilon(1e-10));
  CHECK(b.var_y == Approx(a.var_y).epsilon(1e-10));
  // Same fitted line: the two raw rows at x = -2 share the merged fit.
  CHECK(b.mu_hat[1] == Approx(a.mu_hat[1]).margin(1e-12));
  CHECK(a.mu_hat[1] == Approx(a.mu_hat[2]).margin(1e-12));
}

TEST_CASE("residual regression preconditions and the variance floor") {
  Vec c(1);
  c << 0;
  SECTION("needs two distinct support points per arm") {
    Dataset d = make_dataset({-1, -1, 1, 2}, {0, 0, 1, 1}, {0, 1, 0, 1});
    CHECK_THROWS_MATCHES(estimate_sigma(d, c), Error,
                         MessageMatches(ContainsSubstring("control arm")));
  }
  SECTION("collinear planar support is rank-deficient") {
    Dataset d;
    d.dim = 2;
    d.x.resize(6, 2);
    d.x << -1, 0, -2, 0, -3, 0, 1, 0, 2, 1, 3, -1;
    d.y = Vec::LinSpaced(6, 0.0, 1.0);
    d.w.resize(6);
    d.w << 0, 0, 0, 1, 1, 1;
    d.count = Vec::Ones(6);
    d.ss = Vec::Zero(6);
    Vec c2(2);
    c2 << 0, 0;
    CHECK_THROWS_MATCHES(estimate_sigma(d, c2), Error,
                         MessageMatches(ContainsSubstring("rank-deficient")));
  }
  SECTION("exact fits hit the floor, or fail with the floor disabled") {
    Dataset d = make_dataset({-2, -1, 1, 2, 3}, {0, 0, 1, 1, 1}, {0, 0, 0, 0, 0});
    for (Eigen::Index i = 0; i < 5; ++i) d.y[i] = d.w[i] ? 1.0 + d.x(i, 0) : 0.5 * d.x(i, 0);
    SigmaEstimate s = estimate_sigma(d, c, /*apply_floor=*/true);
    CHECK(s.raw_sigma_sq == Approx(0.0).margin(1e-18));
    CHECK(s.sigma_sq == Approx(s.floor).epsilon(1e-12));
    CHECK(s.sigma_sq > 0);
    CHECK_THROWS_MATCHES(estimate_sigma(d, c, /*apply_floor=*/false), Error,
                         MessageMatches(ContainsSubstring("variance is zero")));
  }
}

TEST_CASE("plug-in sampling error and its floor") {
  Vec gamma(3), resid(3), count(3);
  gamma << 1.0, -2.0, 0.5;
  resid << 0.3, 0.1, -0.4;
  count << 1, 2, 1;
  const double direct = std::sqrt(1.0 * 0.09 + 4.0 * 0.01 + 0.25 * 0.16);
  CHECK(sampling_error(gamma, resid, count, 0.0) == Approx(direct).epsilon(1e-12));

  Vec zero = Vec::Zero(3);
  const double vf = 1e-10;
  const double floored = std::sqrt((1.0 / 1 + 4.0 / 2 + 0.25 / 1) * vf);
  CHECK(sampling_error(gamma, zero, count, vf) == Approx(floored).epsilon(1e-12));
  CHECK_THROWS_AS(sampling_error(gamma, zero, count, 0.0), Error);
}

TEST_CASE("effective sample size counts replicated rows like raw ones") {
  Vec gamma(4);
  gamma << 1.0, -2.0, 2.0, -1.0;
  IntVec w(4);
  w << 0, 0, 1, 1;
  Eigen::Vector2d ess = effective_sample_size(gamma, w, Vec::Ones(4));
  CHECK(ess[0] == Approx(1.0 / 5.0));
  CHECK(ess[1] == Approx(1.0 / 5.0));

  // One aggregated row with count 3 behaves like three unit rows each
  // carrying a third of the weight.
  Vec g1(1), c3(1);
  g1 << 0.9;
  c3 << 3.0;
  IntVec w1(1);
  w1 << 1;
  Vec g3 = Vec::Constant(3, 0.3);
  IntVec w3 = IntVec::Ones(3);
  CHECK(effective_sample_size(g1, w1, c3)[1] ==
        Approx(effective_sample_size(g3, w3, Vec::Ones(3))[1]).epsilon(1e-12));

  CHECK(max_weight_share(gamma) == Approx(0.4));
  CHECK(max_weight_share(Vec::Zero(2)) == 0.0);
}

TEST_CASE("curvature heuristic recovers the Hessian of a quadratic") {
  Vec c(1);
  c << 0;
  SECTION("one running variable") {
    std::vector<double> x = {-3, -2, -1, 1, 2, 3};
    std::vector<int> w = {0, 0, 0, 1, 1, 1};
    std::vector<double> y(6);
    for (std::size_t i = 0; i < 6; ++i) y[i] = 3.0 + 0.5 * x[i] + 0.9 * x[i] * x[i];
    Dataset d = make_dataset(x, w, y);
    CurvatureHeuristic h = curvature_bound_heuristic(d, c, 2.0);
    CHECK(h.max_hessian_norm == Approx(1.8).epsilon(1e-9));
    CHECK(h.bound == Approx(3.6).epsilon(1e-9));
  }
  SECTION("two running variables use the Hessian operator norm") {
    Dataset d;
    d.dim = 2;
    d.x.resize(14, 2);
    d.x << 1, 0, 2, 0, 3, 0, 1, 1, 2, 1, 1, -1, 2, -1,  //
        -1, 0, -2, 0, -3, 0, -1, 1, -2, 1, -1, -1, -2, -1;
    d.w.resize(14);
    d.w << 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0;
    d.y.resize(14);
    for (Eigen::Index i = 0; i < 14; ++i) {
      const double x1 = d.x(i, 0), x2 = d.x(i, 1);
      d.y[i] = 0.5 + 0.25 * x1 + x1 * x1 + x1 * x2 - 3.0 * x2 * x2;
    }
    d.count = Vec::Ones(14);
    d.ss = Vec::Zero(14);
    Vec c2(2);
    c2 << 0, 0;
    CurvatureHeuristic h = curvature_bound_heuristic(d, c2, 1.0);
    // Hessian [[2, 1], [1, -6]] has extreme eigenvalue -(2 + sqrt(17)).
    CHECK(h.max_hessian_norm == Approx(2.0 + std::sqrt(17.0)).epsilon(1e-9));
  }
  SECTION("thin support or a bad multiplier is rejected") {
    Dataset d = make_dataset({-2, -1, 1, 2}, {0, 0, 1, 1}, {0, 0, 1, 1});
    CHECK_THROWS_MATCHES(curvature_bound_heuristic(d, c, 1.0), Error,
                         MessageMatches(ContainsSubstring("supply the bound explicitly")));
    Dataset ok = make_dataset({-3, -2, -1, 1, 2, 3}, {0, 0, 0, 1, 1, 1}, {0, 1, 0, 1, 0, 1});
    CHECK_THROWS_AS(curvature_bound_heuristic(ok, c, 0.0), Error);
  }
}

TEST_CASE("pipeline on the saturated design reproduces every closed form") {
  DesignProblem p = forced_problem();
  PipelineOptions opts;
  opts.bound = 0.1;
  InferenceReport rep = run_pipeline(p, opts);

  Vec expect(4);
  expect << 1.0, -2.0, 2.0, -1.0;
  REQUIRE(rep.solution.gamma.size() == 4);
  for (Eigen::Index i = 0; i < 4; ++i)
    CHECK(rep.solution.gamma[i] == Approx(expect[i]).margin(1e-4));

  CHECK(rep.tau_hat == Approx(1.0).margin(1e-4));
  CHECK(rep.max_bias == Approx(0.2).margin(1e-3));
  // Known homoskedastic noise: the exact estimator sd, sqrt(sum gamma^2).
  CHECK(rep.std_err == Approx(std::sqrt(10.0)).epsilon(1e-4));
  CHECK_FALSE(rep.sigma_estimated);
  CHECK(rep.sigma_sq == 1.0);
  CHECK(rep.halfwidth ==
        Approx(bias_aware_halfwidth(rep.max_bias, rep.std_err, 0.05)).epsilon(1e-12));
  CHECK(rep.ci_lo == Approx(rep.tau_hat - rep.halfwidth));
  CHECK(rep.ci_hi == Approx(rep.tau_hat + rep.halfwidth));
  CHECK(rep.ess_control == Approx(0.2).epsilon(1e-3));
  CHECK(rep.ess_treated == Approx(0.2).epsilon(1e-3));
  CHECK(rep.max_weight_share == Approx(0.4).epsilon(1e-3));
  CHECK(has_warning(rep, "20%"));  // two points carry 40% of the mass each
  CHECK(rep.n_retained == 4);
  CHECK(rep.n_dropped == 0);
  CHECK(rep.total_count == 4.0);
  CHECK(rep.bound == 0.1);
  CHECK(rep.dim == 1);

  SECTION("alpha is validated") {
    PipelineOptions bad = opts;
    bad.alpha = 0.0;
    CHECK_THROWS_AS(run_pipeline(p, bad), Error);
  }
  SECTION("a bound is required when the heuristic is off") {
    PipelineOptions none;
    CHECK_THROWS_MATCHES(run_pipeline(p, none), Error,
                         MessageMatches(ContainsSubstring("curvature bound is required")));
  }
}

TEST_CASE("pipeline with estimated noise and the heuristic bound") {
  // Pure quadratic outcome: the heuristic is exact, residuals are the
  // quadratic leftovers of the arm-linear fit.
  std::vector<double> x = {-3, -2, -1, -0.5, 0.5, 1, 2, 3};
  std::vector<int> w = {0, 0, 0, 0, 1, 1, 1, 1};
  std::vector<double> y(8);
  for (std::size_t i = 0; i < 8; ++i) y[i] = 0.9 * x[i] * x[i] + (w[i] ? 1.0 : 0.0);
  Dataset d = make_dataset(x, w, y);
  Vec c(1);
  c << 0;
  DesignProblem p = validate_design(d, AssignmentRule::threshold(0.0), c,
                                    Estimand::PointwiseCate, NoiseModel::estimate());

  PipelineOptions opts;
  opts.heuristic_multiplier = 2.0;
  InferenceReport rep = run_pipeline(p, opts);
  CHECK(rep.bound == Approx(3.6).epsilon(1e-9));
  CHECK(rep.sigma_estimated);
  CHECK(rep.sigma_sq > 0);
  CHECK(rep.std_err > 0);
  // Plug-in standard error agrees with a direct recomputation.
  SigmaEstimate s = estimate_sigma(d, c);
  const double direct = std::sqrt(
      (rep.solution.gamma.array().square() * s.resid.array().square()).sum());
  CHECK(rep.std_err == Approx(direct).epsilon(1e-10));

  SECTION("linear outcomes warn that the heuristic found nothing") {
    Dataset lin = d;
    for (Eigen::Index i = 0; i < lin.rows(); ++i)
      lin.y[i] = 0.3 * lin.x(i, 0) + (lin.w[i] ? 2.0 : 0.0);
    DesignProblem lp = validate_design(lin, AssignmentRule::threshold(0.0), c,
                                       Estimand::PointwiseCate, NoiseModel::estimate());
    InferenceReport lr = run_pipeline(lp, opts);
    CHECK(lr.bound == Approx(0.0).margin(1e-12));
    CHECK(has_warning(lr, "no curvature"));
    CHECK(lr.max_bias == 0.0);
  }
}

TEST_CASE("pipeline warns when weights pile up at the window edge") {
  Dataset d = make_dataset({-2, -1, 1, 2}, {0, 0, 1, 1}, {0.0, 0.0, 1.0, 1.0});
  Vec c(1);
  c << 0;
  DesignProblem p = validate_design(d, AssignmentRule::threshold(0.0), c,
                                    Estimand::PointwiseCate, NoiseModel::homoskedastic(1.0),
                                    /*window_radius=*/2.1);
  PipelineOptions opts;
  opts.bound = 0.1;
  InferenceReport rep = run_pipeline(p, opts);
  // gamma(+-2) = -+1 sits in the outer 5% annulus of the radius-2.1 window.
  CHECK(has_warning(rep, "window"));
}

TEST_CASE("weighted estimand reports the focal point its weights imply") {
  Dataset d = make_dataset({-2.5, -1.5, -0.5, 0.5, 1.0, 3.0}, {0, 0, 0, 1, 1, 1},
                           {0.1, 0.2, 0.3, 0.9, 1.1, 1.4});
  Vec c(1);
  c << 0;
  DesignProblem p = validate_design(d, AssignmentRule::threshold(0.0), c,
                                    Estimand::WeightedCate, NoiseModel::homoskedastic(1.0));
  PipelineOptions opts;
  opts.bound = 1.0;
  InferenceReport rep = run_pipeline(p, opts);
  REQUIRE(rep.implied_focal.size() == 1);
  double xs = 0;
  for (Eigen::Index i = 0; i < p.data.rows(); ++i)
    if (p.data.w[i]) xs += rep.solution.gamma[i] * p.data.x(i, 0);
  CHECK(rep.implied_focal[0] == Approx(xs).margin(1e-12));
}

TEST_CASE("sensitivity sweep isolates failures and widens with the bound") {
  DesignProblem p = forced_problem();
  PipelineOptions base;
  std::vector<double> bounds = {0.0, 0.1, -1.0, 0.4};
  std::vector<SensitivityRow> rows = sensitivity_over_bounds(p, bounds, base);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].bound == bounds[i]);

  CHECK(rows[2].report.has_value() == false);
  CHECK_THAT(rows[2].error, ContainsSubstring("design:"));
  CHECK_THAT(rows[2].error, ContainsSubstring("curvature bound"));

  for (std::size_t i : {std::size_t(0), std::size_t(1), std::size_t(3)}) {
    REQUIRE(rows[i].report.has_value());
    CHECK(rows[i].error.empty());
    CHECK(rows[i].report->tau_hat == Approx(1.0).margin(1e-4));
    CHECK(rows[i].report->max_bias == Approx(2.0 * bounds[i]).margin(2e-3));
  }
  CHECK(rows[1].report->halfwidth > rows[0].report->halfwidth);
  CHECK(rows[3].report->halfwidth > rows[1].report->halfwidth);
}
