#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "ppscm/simplex.hpp"
#include "ppscm/solver.hpp"

using namespace ppscm;

namespace {

std::vector<oracle::TreatedSpec> specs(const PanelData& p, const EventConfig& cfg) {
  std::vector<oracle::TreatedSpec> out;
  for (std::size_t j = 0; j < cfg.num_treated(); ++j)
    out.push_back({cfg.treated[j], p.treat_index[cfg.treated[j]], cfg.lags[j]});
  return out;
}

void expect_feasible(const FitResult& fit, const DonorSets& donors) {
  const auto& w = fit.weights.values;
  EXPECT_GE(w.minCoeff(), 0.0);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    EXPECT_NEAR(w.col(j).sum(), fit.column_members[static_cast<std::size_t>(j)].size(), 1e-12);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      if (!donors.contains(fit.column_members[static_cast<std::size_t>(j)].front(), static_cast<std::size_t>(i))) {
        EXPECT_EQ(w(i, j), 0.0);
      }
    }
  }
}

}  // namespace

TEST(ProjectSimplex, Examples) {
  EXPECT_TRUE(project_simplex(Eigen::Vector2d(0.3, 0.7), 1.0).isApprox(Eigen::Vector2d(0.3, 0.7)));
  EXPECT_TRUE(project_simplex(Eigen::Vector2d(2, 0), 1.0).isApprox(Eigen::Vector2d(1, 0)));
  const auto v = project_simplex(Eigen::Vector3d(0.6, 0.6, 0.6), 1.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(v(i), 1.0 / 3, 1e-15);
}

TEST(ProjectSimplex, MatchesBisection) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0, 2);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 1 + rep % 9;
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = z(rng);
    const double total = 0.5 + rep % 3;
    const auto a = project_simplex(v, total);
    const auto b = oracle::project_by_bisection(v, total);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_GE(a.minCoeff(), 0.0);
    EXPECT_NEAR(a.sum(), total, 1e-12);
  }
}

TEST(Solve, SingleDonorForced) {
  std::mt19937_64 rng(2);
  auto inst = fixtures::random_instance(rng, 2, 1, 8, 1, 4, 5, 0);
  for (double nu : {0.0, 0.3, 1.0}) {
    SolveOptions o;
    o.nu = nu;
    const auto fit = solve(inst.panel, inst.cfg, inst.donors, o, Normalization{});
    EXPECT_DOUBLE_EQ(fit.weights.values(1, 0), 1.0);
  }
}

TEST(Solve, ConvexHullFitIsExact) {
  Eigen::MatrixXd y(4, 6);
  y << 2, 1, 3, 2, 0, 0, 1, 0, 2, 1, 0, 0, 3, 2, 4, 3, 0, 0, 5, 5, 5, 5, 0, 0;
  const auto p = fixtures::make_panel(y, {4, -1, -1, -1});
  const auto cfg = make_event_config(p);
  SolveOptions o;
  o.nu = 0;
  o.lambda = 1e-12;
  const auto fit = solve(p, cfg, donor_sets(p, cfg), o, Normalization{});
  EXPECT_LT(fit.balance.q_sep, 1e-6);
}

TEST(Solve, FeasibleAndObjectiveReevaluates) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = fixtures::random_instance(rng, 9, 3, 12, 1, 4, 4, 5);
    SolveOptions o;
    o.nu = 0.1 * (rep % 11);
    o.intercept = rep % 2 == 1;
    const auto nr = normalizers(inst.panel, inst.cfg, inst.donors, o);
    const auto fit = solve(inst.panel, inst.cfg, inst.donors, o, nr.norm);
    expect_feasible(fit, inst.donors);
    EXPECT_TRUE(fit.converged);
    const double re = evaluate_objective(inst.panel, inst.cfg, o, nr.norm, fit.unit_weights, fit.intercepts);
    EXPECT_NEAR(fit.objective, re, 1e-10 * std::max(1.0, std::abs(re)));
    const double ref = oracle::objective(inst.panel.outcomes, specs(inst.panel, inst.cfg), fit.unit_weights.values,
                                         o.nu, nr.norm.c_sep, nr.norm.c_pool, o.lambda, fit.intercepts);
    EXPECT_NEAR(fit.objective, ref, 1e-10 * std::max(1.0, std::abs(ref)));
  }
}

TEST(Solve, SeparateEqualsIndependentUnitProblems) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    auto inst = fixtures::random_instance(rng, 7, 2, 10, 1, 3, 4, 3);
    SolveOptions o;
    o.nu = 0;
    const auto nr = normalizers(inst.panel, inst.cfg, inst.donors, o);
    const auto fit = solve(inst.panel, inst.cfg, inst.donors, o, nr.norm);
    for (std::size_t j = 0; j < 2; ++j) {
      const int L = inst.cfg.lags[j];
      const int t0 = inst.panel.treat_index[inst.cfg.treated[j]];
      const auto& dn = inst.donors[j];
      Eigen::VectorXd t(L);
      Eigen::MatrixXd D(L, static_cast<Eigen::Index>(dn.size()));
      for (int l = 1; l <= L; ++l) {
        t(l - 1) = inst.panel.outcomes(static_cast<Eigen::Index>(inst.cfg.treated[j]), t0 - l);
        for (std::size_t k = 0; k < dn.size(); ++k)
          D(l - 1, static_cast<Eigen::Index>(k)) = inst.panel.outcomes(static_cast<Eigen::Index>(dn[k]), t0 - l);
      }
      const double ridge = o.lambda * nr.norm.c_sep * nr.norm.c_sep * 2 * L;
      const auto w = oracle::simplex_least_squares(t, D, ridge);
      for (std::size_t k = 0; k < dn.size(); ++k)
        EXPECT_NEAR(fit.weights.values(static_cast<Eigen::Index>(dn[k]), static_cast<Eigen::Index>(j)),
                    w(static_cast<Eigen::Index>(k)), 1e-6);
    }
  }
}

TEST(Solve, GridSearchSmallInstance) {
  std::mt19937_64 rng(5);
  auto inst = fixtures::random_instance(rng, 4, 2, 8, 1, 2, 5, 0);
  SolveOptions o;
  o.nu = 0.5;
  const auto nr = normalizers(inst.panel, inst.cfg, inst.donors, o);
  const auto fit = solve(inst.panel, inst.cfg, inst.donors, o, nr.norm);
  const double best = oracle::grid_minimum(inst.panel.outcomes, specs(inst.panel, inst.cfg), inst.donors.sets,
                                           o.nu, nr.norm.c_sep, nr.norm.c_pool, o.lambda);
  EXPECT_LE(fit.objective, best + 1e-6);
}

TEST(Solve, StrictConvexityAcrossStarts) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 5; ++rep) {
    auto inst = fixtures::random_instance(rng, 10, 3, 12, 1, 5, 5, 4);
    SolveOptions o;
    o.nu = 0.5;
    o.lambda = 1e-3;
    const auto nr = normalizers(inst.panel, inst.cfg, inst.donors, o);
    const auto a = solve(inst.panel, inst.cfg, inst.donors, o, nr.norm);
    Eigen::MatrixXd init = Eigen::MatrixXd::Zero(10, 3);
    for (std::size_t j = 0; j < 3; ++j) {
      for (auto i : inst.donors[j]) init(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = u(rng);
      init.col(static_cast<Eigen::Index>(j)) /= init.col(static_cast<Eigen::Index>(j)).sum();
    }
    const WeightMatrix start(init);
    const auto b = solve(inst.panel, inst.cfg, inst.donors, o, nr.norm, &start);
    EXPECT_LT((a.weights.values - b.weights.values).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Solve, ObjectiveTraceIsMonotone) {
  std::mt19937_64 rng(7);
  auto inst = fixtures::random_instance(rng, 12, 4, 14, 1, 6, 5, 6);
  SolveOptions o;
  o.nu = 0.4;
  o.record_trace = true;
  o.polish = false;
  const auto nr = normalizers(inst.panel, inst.cfg, inst.donors, o);
  const auto fit = solve(inst.panel, inst.cfg, inst.donors, o, nr.norm);
  ASSERT_GT(fit.trace.size(), 1u);
  for (std::size_t i = 1; i < fit.trace.size(); ++i)
    EXPECT_LE(fit.trace[i], fit.trace[i - 1] + 1e-12 * std::abs(fit.trace[i - 1]));
}

TEST(Solve, InterceptEqualsDemeanedProblem) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    auto inst = fixtures::random_instance(rng, 8, 1, 10, 1, 4, 6, 0);
    SolveOptions with;
    with.intercept = true;
    with.nu = 0.3;
    const Normalization norm{0.7, 0.9};
    const auto a = solve(inst.panel, inst.cfg, inst.donors, with, norm);
    auto demeaned = inst.panel;
    const auto r = demean_residuals(inst.panel, inst.cfg);
    const int t0 = inst.panel.treat_index[inst.cfg.treated[0]];
    for (int l = 1; l <= inst.cfg.lags[0]; ++l) demeaned.outcomes.col(t0 - l) = r[0].col(l - 1);
    SolveOptions without = with;
    without.intercept = false;
    const auto b = solve(demeaned, inst.cfg, inst.donors, without, norm);
    EXPECT_LT((a.weights.values - b.weights.values).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Intercept, ClosedFormExamples) {
  Eigen::MatrixXd y(2, 3);
  y << 2.5, 1.5, 0, 1.5, 1.5, 0;
  const auto p = fixtures::make_panel(y, {2, -1});
  const auto cfg = make_event_config(p);
  EXPECT_DOUBLE_EQ(intercept_closed_form(p, cfg, 0, Eigen::Vector2d(0, 1)), 0.5);
  auto same = p;
  same.outcomes.row(0) = same.outcomes.row(1);
  EXPECT_DOUBLE_EQ(intercept_closed_form(same, cfg, 0, Eigen::Vector2d(0, 1)), 0.0);
  auto shifted = p;
  shifted.outcomes.row(0).array() += 4.0;
  EXPECT_DOUBLE_EQ(intercept_closed_form(shifted, cfg, 0, Eigen::Vector2d(0, 1)), 4.5);
}

TEST(Cohorts, DistinctTimesReduceToUnitProblem) {
  std::mt19937_64 rng(9);
  Eigen::MatrixXd y = Eigen::MatrixXd::Random(7, 10);
  const auto p = fixtures::make_panel(y, {4, 5, 6, -1, -1, -1, -1});
  const auto cfg = make_event_config(p, 1, 3);
  const auto donors = donor_sets(p, cfg);
  SolveOptions o;
  o.nu = 0.4;
  const Normalization norm{0.5, 0.5};
  const auto unit = solve(p, cfg, donors, o, norm);
  o.cohort_mode = true;
  const auto cohort = solve(p, cfg, donors, o, norm);
  EXPECT_EQ(cohort.weights.num_columns(), 3);
  EXPECT_LT((unit.weights.values - cohort.weights.values).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Cohorts, SharedTimeColumnSumsToSize) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Random(6, 10);
  const auto p = fixtures::make_panel(y, {4, 4, 6, -1, -1, -1});
  const auto cfg = make_event_config(p, 1, 3);
  const auto donors = donor_sets(p, cfg);
  SolveOptions o;
  o.cohort_mode = true;
  const auto fit = solve(p, cfg, donors, o, Normalization{});
  ASSERT_EQ(fit.weights.num_columns(), 2);
  EXPECT_NEAR(fit.weights.values.col(0).sum(), 2.0, 1e-12);
  EXPECT_NEAR(fit.weights.values.col(1).sum(), 1.0, 1e-12);
  EXPECT_NEAR(fit.unit_weights.values.col(0).sum(), 1.0, 1e-12);
  EXPECT_TRUE(fit.unit_weights.values.col(0).isApprox(fit.unit_weights.values.col(1)));
}

TEST(Cohorts, SingleCohortIsPooledFitOfSum) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Random(6, 8);
  const auto p = fixtures::make_panel(y, {5, 5, 5, -1, -1, -1});
  const auto cfg = make_event_config(p, 1, 4);
  const auto donors = donor_sets(p, cfg);
  SolveOptions o;
  o.cohort_mode = true;
  o.nu = 0.0;
  o.lambda = 0;
  const auto sep = solve(p, cfg, donors, o, Normalization{});
  o.nu = 1.0;
  const auto pool = solve(p, cfg, donors, o, Normalization{});
  EXPECT_LT((sep.weights.values - pool.weights.values).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Covariates, XiTermsEnterObjective) {
  std::mt19937_64 rng(10);
  auto inst = fixtures::random_instance(rng, 8, 2, 10, 1, 4, 5, 2);
  inst.panel.covariates = Eigen::MatrixXd::Random(8, 2);
  inst.panel.covariate_names = {"a", "b"};
  SolveOptions o;
  o.xi = default_xi(inst.panel, inst.cfg);
  EXPECT_GT(o.xi, 0.0);
  const auto nr = normalizers(inst.panel, inst.cfg, inst.donors, o);
  const auto fit = solve(inst.panel, inst.cfg, inst.donors, o, nr.norm);
  ASSERT_TRUE(fit.balance.q_sep_x.has_value());
  const double re = evaluate_objective(inst.panel, inst.cfg, o, nr.norm, fit.unit_weights, fit.intercepts);
  EXPECT_NEAR(fit.objective, re, 1e-10 * std::max(1.0, re));
  auto cov_term = [&](const FitResult& f) {
    const double sx = *f.balance.q_sep_x, px = *f.balance.q_pool_x;
    return (1 - o.nu) * sx * sx / (nr.norm.c_sep * nr.norm.c_sep) +
           o.nu * px * px / (nr.norm.c_pool * nr.norm.c_pool);
  };
  const double light = cov_term(fit);
  o.xi *= 100.0;
  const auto heavy = solve(inst.panel, inst.cfg, inst.donors, o, nr.norm);
  EXPECT_LE(cov_term(heavy), light + 1e-9);
}
