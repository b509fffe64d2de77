#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "ppscm/tuning.hpp"

using namespace ppscm;

namespace {

FitResult fake_fit(std::vector<double> per_unit, double q_pool, double q_sep = 0, double frob = 0) {
  FitResult f;
  f.balance.per_unit_q = Eigen::Map<Eigen::VectorXd>(per_unit.data(), static_cast<Eigen::Index>(per_unit.size()));
  f.balance.q_pool = q_pool;
  f.balance.q_sep = q_sep;
  f.frobenius_norm = frob;
  return f;
}

EventConfig lags_config(std::vector<int> lags) {
  EventConfig cfg;
  cfg.lags = lags;
  for (std::size_t j = 0; j < lags.size(); ++j) cfg.treated.push_back(j);
  return cfg;
}

}  // namespace

TEST(NuHeuristic, Examples) {
  const auto cfg = lags_config({4, 4});
  EXPECT_DOUBLE_EQ(nu_heuristic(cfg, fake_fit({1, 1}, 0.5)), 0.5);
  EXPECT_DOUBLE_EQ(nu_heuristic(cfg, fake_fit({1, 1}, 0.0)), 0.0);
  EXPECT_DOUBLE_EQ(nu_heuristic(cfg, fake_fit({0, 0}, 0.0)), 0.0);
  EXPECT_DOUBLE_EQ(nu_heuristic(cfg, fake_fit({1, 1}, 3.0)), 1.0);
}

TEST(NuHeuristic, RaggedLagsUseLongestWindow) {
  const auto cfg = lags_config({1, 4});
  // sqrt(4) * 0.5 / ((1 * 1 + 2 * 1) / 2)
  EXPECT_NEAR(nu_heuristic(cfg, fake_fit({1, 1}, 0.5)), 2.0 / 3.0, 1e-15);
}

TEST(NuHeuristic, PipelineUsesSeparateFit) {
  std::mt19937_64 rng(1);
  auto inst = fixtures::random_instance(rng, 10, 3, 12, 1, 4, 5, 4);
  const auto pipe = run_pipeline(inst.panel, inst.cfg, inst.donors, SolveOptions{});
  EXPECT_TRUE(pipe.nu_from_heuristic);
  EXPECT_DOUBLE_EQ(pipe.nu, nu_heuristic(inst.cfg, pipe.normalizers.separate_fit));
  EXPECT_GE(pipe.nu, 0.0);
  EXPECT_LE(pipe.nu, 1.0);
  const auto fixed = run_pipeline(inst.panel, inst.cfg, inst.donors, SolveOptions{}, 0.3);
  EXPECT_FALSE(fixed.nu_from_heuristic);
  EXPECT_DOUBLE_EQ(fixed.fit.options.nu, 0.3);
}

TEST(Grids, Shapes) {
  const auto d = default_nu_grid();
  ASSERT_EQ(d.size(), 22u);
  EXPECT_DOUBLE_EQ(d.front(), 0.0);
  EXPECT_DOUBLE_EQ(d[d.size() - 2], 0.99);
  EXPECT_DOUBLE_EQ(d.back(), 1.0);
  const auto g = interior_nu_grid(11);
  ASSERT_EQ(g.size(), 13u);
  EXPECT_DOUBLE_EQ(g[6], 0.5);
  EXPECT_EQ(normalise_grid({0.5, 0.5, 0.2}), (std::vector<double>{0.0, 0.2, 0.5, 1.0}));
  EXPECT_THROW(normalise_grid({1.5}), Error);
}

TEST(Frontier, MonotoneTradeoff) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    auto inst = fixtures::random_instance(rng, 10, 3, 12, 1, 4, 4, 5);
    SolveOptions o;
    o.tol = 1e-12;
    const auto pts = trace_frontier(inst.panel, inst.cfg, inst.donors, interior_nu_grid(9), o);
    ASSERT_EQ(pts.size(), 11u);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      ASSERT_TRUE(pts[i].ok);
      EXPECT_LE(pts[i].q_pool_norm, pts[i - 1].q_pool_norm + 1e-6);
      EXPECT_GE(pts[i].q_sep_norm, pts[i - 1].q_sep_norm - 1e-6);
    }
  }
}

TEST(Frontier, WarmAndColdStartsAgree) {
  std::mt19937_64 rng(3);
  auto inst = fixtures::random_instance(rng, 10, 3, 12, 1, 4, 4, 5);
  SolveOptions o;
  o.lambda = 1e-3;
  const auto warm = trace_frontier(inst.panel, inst.cfg, inst.donors, interior_nu_grid(5), o, {}, true);
  const auto cold = trace_frontier(inst.panel, inst.cfg, inst.donors, interior_nu_grid(5), o, {}, false);
  ASSERT_EQ(warm.size(), cold.size());
  for (std::size_t i = 0; i < warm.size(); ++i) {
    EXPECT_NEAR(warm[i].q_sep, cold[i].q_sep, 1e-6);
    EXPECT_NEAR(warm[i].q_pool, cold[i].q_pool, 1e-6);
    EXPECT_NEAR(warm[i].att, cold[i].att, 1e-6);
  }
}

TEST(Frontier, FixedNormalisationIsUsed) {
  std::mt19937_64 rng(4);
  auto inst = fixtures::random_instance(rng, 8, 2, 10, 1, 3, 4, 3);
  const Normalization norm{2.0, 4.0};
  const auto pts = trace_frontier(inst.panel, inst.cfg, inst.donors, {0.5}, SolveOptions{}, {}, true, &norm);
  for (const auto& p : pts) {
    EXPECT_NEAR(p.q_sep_norm, p.q_sep / 2.0, 1e-15);
    EXPECT_NEAR(p.q_pool_norm, p.q_pool / 4.0, 1e-15);
  }
}

TEST(Tangent, ParabolaTouchesAtMidpoint) {
  std::vector<FrontierPoint> pts;
  for (int i = 0; i <= 10; ++i) {
    FrontierPoint p;
    p.nu = i / 10.0;
    p.q_sep_norm = i / 10.0;
    p.q_pool_norm = (1 - p.q_sep_norm) * (1 - p.q_sep_norm);
    pts.push_back(p);
  }
  const auto t = tangent_nu(pts);
  ASSERT_TRUE(t.has_value());
  EXPECT_DOUBLE_EQ(*t, 0.5);
  pts.resize(2);
  EXPECT_FALSE(tangent_nu(pts).has_value());
}

TEST(OracleNu, Examples) {
  BoundInputs in;
  in.rho_bar = Eigen::VectorXd::Constant(1, 1.0);
  in.s = 1.0;
  EXPECT_DOUBLE_EQ(oracle_nu_ar(in, fake_fit({1}, 1.0, 1.0)), 0.5);
  EXPECT_DOUBLE_EQ(oracle_nu_ar(in, fake_fit({0}, 1.0, 0.0)), 1.0);
  EXPECT_DOUBLE_EQ(oracle_nu_ar(in, fake_fit({1}, 0.0, 1.0)), 0.0);
  try {
    oracle_nu_ar(in, fake_fit({0}, 0.0, 0.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BothZero);
  }
}

TEST(Bounds, AutoregressiveArithmetic) {
  BoundInputs in;
  in.rho_bar = Eigen::VectorXd::Constant(1, 0.1);
  in.s = 0.05;
  in.sigma = 0;
  EXPECT_NEAR(bound_ar(in, 4, 4, 1.0, 0.0, 0.0), 0.2, 1e-15);
  EXPECT_NEAR(bound_ar(in, 4, 4, 1.0, 1.0, 0.0) - bound_ar(in, 4, 4, 1.0, 0.0, 0.0), 0.1, 1e-15);
  in.sigma = 0.1;
  in.delta = 2;
  EXPECT_NEAR(bound_ar(in, 4, 4, 0.0, 0.0, 1.0), 2 * 0.1 / 2 * 2, 1e-15);
  EXPECT_EQ(bound_ar(in, 4, 4, fake_fit({0}, 1.0, 0.5, 0.3)), bound_ar(in, 4, 4, 1.0, 0.5, 0.3));
}

TEST(Bounds, FactorApproximationDecaysAndIsMonotone) {
  BoundInputs in;
  in.mu_bar = Eigen::VectorXd::Constant(2, 0.5);
  in.s = 0.2;
  in.sigma = 0.1;
  const double small_L = bound_lfm(in, 4, 5, 40, 0, 0, 0);
  const double large_L = bound_lfm(in, 1000000, 5, 40, 0, 0, 0);
  EXPECT_GT(small_L, large_L);
  const double floor = in.delta * in.sigma / std::sqrt(5.0);
  EXPECT_NEAR(large_L, floor, 2e-3);
  EXPECT_LT(bound_lfm(in, 10, 5, 40, 0.1, 0.1, 0.5), bound_lfm(in, 10, 5, 40, 0.2, 0.1, 0.5));
  EXPECT_LT(bound_lfm(in, 10, 5, 40, 0.1, 0.1, 0.5), bound_lfm(in, 10, 5, 40, 0.1, 0.2, 0.5));
  EXPECT_LT(bound_lfm(in, 10, 5, 40, 0.1, 0.1, 0.5), bound_lfm(in, 10, 5, 40, 0.1, 0.1, 0.6));
}
