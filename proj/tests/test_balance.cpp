#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "ppscm/balance.hpp"
#include "ppscm/solver.hpp"

using namespace ppscm;

namespace {

std::vector<oracle::TreatedSpec> specs(const PanelData& p, const EventConfig& cfg) {
  std::vector<oracle::TreatedSpec> out;
  for (std::size_t j = 0; j < cfg.num_treated(); ++j)
    out.push_back({cfg.treated[j], p.treat_index[cfg.treated[j]], cfg.lags[j]});
  return out;
}

WeightMatrix random_weights(std::mt19937_64& rng, const DonorSets& d, Eigen::Index N) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(N, static_cast<Eigen::Index>(d.size()));
  for (std::size_t j = 0; j < d.size(); ++j) {
    for (auto i : d[j]) g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = u(rng);
    g.col(static_cast<Eigen::Index>(j)) /= g.col(static_cast<Eigen::Index>(j)).sum();
  }
  return WeightMatrix(g);
}

}  // namespace

TEST(QUnit, ExactMatchIsZero) {
  Eigen::MatrixXd y(2, 3);
  y << 1, 2, 0, 1, 2, 0;
  const auto p = fixtures::make_panel(y, {2, -1});
  const auto cfg = make_event_config(p);
  EXPECT_EQ(q_unit(p, cfg, 0, Eigen::Vector2d(0, 1)), 0.0);
}

TEST(QUnit, SingleDonorArithmetic) {
  Eigen::MatrixXd y(2, 3);
  y << 2, 1, 0,  // lags l = 1, 2 read periods 1 and 0
      4, 3, 0;
  const auto p = fixtures::make_panel(y, {2, -1});
  EXPECT_DOUBLE_EQ(q_unit(p, make_event_config(p), 0, Eigen::Vector2d(0, 1)), 2.0);
}

TEST(QUnit, TwoDonorsArithmetic) {
  Eigen::MatrixXd y(3, 3);
  y << 2, 1, 0, 2, 1, 0, 4, 3, 0;
  const auto p = fixtures::make_panel(y, {2, -1, -1});
  EXPECT_DOUBLE_EQ(q_unit(p, make_event_config(p), 0, Eigen::Vector3d(0, 0.5, 0.5)), 1.0);
}

TEST(QSep, SingleTreatedEqualsQUnitAndPool) {
  std::mt19937_64 rng(1);
  auto inst = fixtures::random_instance(rng, 6, 1, 8, 1, 4, 5, 0);
  const auto w = random_weights(rng, inst.donors, 6);
  const double q1 = q_unit(inst.panel, inst.cfg, 0, w.column(0));
  EXPECT_DOUBLE_EQ(q_sep(inst.panel, inst.cfg, w), q1);
  EXPECT_NEAR(q_pool(inst.panel, inst.cfg, w), q1, 1e-15);
}

TEST(QSep, RootMeanSquareOfUnits) {
  // unit 0 matched exactly by unit 2, unit 1 off by 2 at its single lag
  Eigen::MatrixXd y(3, 4);
  y << 1, 1, 0, 0, 3, 3, 3, 0, 1, 1, 1, 1;
  const auto p = fixtures::make_panel(y, {2, 3, -1});
  const auto cfg = make_event_config(p, 0, 1);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(3, 2);
  g(2, 0) = g(2, 1) = 1;
  EXPECT_DOUBLE_EQ(q_sep(p, cfg, WeightMatrix(g)), std::sqrt(2.0));
}

TEST(QPool, GapsCancel) {
  Eigen::MatrixXd y(3, 3);
  y << 2, 0, 0, 0, 0, 0, 1, 0, 0;
  const auto p = fixtures::make_panel(y, {1, 1, -1});
  const auto cfg = make_event_config(p, 1, 1);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(3, 2);
  g(2, 0) = g(2, 1) = 1;
  EXPECT_DOUBLE_EQ(q_pool(p, cfg, WeightMatrix(g)), 0.0);
  EXPECT_DOUBLE_EQ(q_sep(p, cfg, WeightMatrix(g)), 1.0);
}

TEST(QPool, MatchesOracleOnRaggedLags) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = fixtures::random_instance(rng, 9, 3, 12, 1, 6, 3, 6);
    const auto w = random_weights(rng, inst.donors, 9);
    const auto ref = oracle::imbalance(inst.panel.outcomes, specs(inst.panel, inst.cfg), w.values);
    EXPECT_NEAR(q_pool(inst.panel, inst.cfg, w), ref.q_pool, 1e-13);
    EXPECT_NEAR(q_sep(inst.panel, inst.cfg, w), ref.q_sep, 1e-13);
    Eigen::VectorXd alpha = Eigen::VectorXd::Random(3);
    const auto ra = oracle::imbalance(inst.panel.outcomes, specs(inst.panel, inst.cfg), w.values, alpha);
    EXPECT_NEAR(q_pool(inst.panel, inst.cfg, w, alpha), ra.q_pool, 1e-13);
    EXPECT_NEAR(q_sep(inst.panel, inst.cfg, w, alpha), ra.q_sep, 1e-13);
  }
}

TEST(QPool, JensenForSharedColumns) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = fixtures::random_instance(rng, 8, 3, 10, 1, 4, 6, 0);
    auto w = random_weights(rng, inst.donors, 8);
    for (Eigen::Index j = 1; j < 3; ++j) w.values.col(j) = w.values.col(0);
    EXPECT_LE(q_pool(inst.panel, inst.cfg, w), q_sep(inst.panel, inst.cfg, w) + 1e-14);
  }
}

TEST(QPool, ScalingAndShiftInvariance) {
  std::mt19937_64 rng(6);
  auto inst = fixtures::random_instance(rng, 8, 3, 10, 1, 4, 4, 3);
  const auto w = random_weights(rng, inst.donors, 8);
  auto scaled = inst.panel;
  scaled.outcomes *= 3.0;
  EXPECT_NEAR(q_sep(scaled, inst.cfg, w), 3 * q_sep(inst.panel, inst.cfg, w), 1e-12);
  EXPECT_NEAR(q_pool(scaled, inst.cfg, w), 3 * q_pool(inst.panel, inst.cfg, w), 1e-12);
  auto shifted = inst.panel;
  shifted.outcomes.array() += 10.0;
  const auto a0 = intercepts_closed_form(inst.panel, inst.cfg, w);
  const auto a1 = intercepts_closed_form(shifted, inst.cfg, w);
  EXPECT_NEAR(q_sep(shifted, inst.cfg, w, a1), q_sep(inst.panel, inst.cfg, w, a0), 1e-12);
  EXPECT_NEAR(q_pool(shifted, inst.cfg, w, a1), q_pool(inst.panel, inst.cfg, w, a0), 1e-12);
}

TEST(QCovariates, OppositeGaps) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 3);
  auto p = fixtures::make_panel(y, {1, 1, -1});
  p.covariates = Eigen::MatrixXd(3, 1);
  *p.covariates << 1, -1, 0;
  p.covariate_names = {"x"};
  const auto cfg = make_event_config(p, 1, 1);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(3, 2);
  g(2, 0) = g(2, 1) = 1;
  auto [sx, px] = q_covariates(p, cfg, WeightMatrix(g));
  EXPECT_DOUBLE_EQ(sx, 1.0);
  EXPECT_DOUBLE_EQ(px, 0.0);
}

TEST(QCovariates, ExactReproductionAndSingleUnit) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 3);
  auto p = fixtures::make_panel(y, {1, -1, -1});
  p.covariates = Eigen::MatrixXd(3, 2);
  *p.covariates << 1, 2, 0, 2, 2, 2;
  p.covariate_names = {"a", "b"};
  const auto cfg = make_event_config(p, 1, 1);
  auto [s0, p0] = q_covariates(p, cfg, WeightMatrix(Eigen::Vector3d(0, 0.5, 0.5)));
  EXPECT_DOUBLE_EQ(s0, 0.0);
  EXPECT_DOUBLE_EQ(p0, 0.0);
  auto [s1, p1] = q_covariates(p, cfg, WeightMatrix(Eigen::Vector3d(0, 1, 0)));
  EXPECT_DOUBLE_EQ(s1, p1);
}

TEST(QCovariates, AbsentIsError) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(2, 3);
  const auto p = fixtures::make_panel(y, {1, -1});
  const auto cfg = make_event_config(p);
  EXPECT_THROW(q_covariates(p, cfg, WeightMatrix(Eigen::Vector2d(0, 1))), Error);
}

TEST(Normalizers, SingleDonorDistance) {
  Eigen::MatrixXd y(2, 4);
  y << 1, 2, 3, 0, 2, 2, 1, 0;
  const auto p = fixtures::make_panel(y, {3, -1});
  const auto cfg = make_event_config(p);
  const auto nr = normalizers(p, cfg, donor_sets(p, cfg), SolveOptions{});
  const double expect = std::sqrt((1.0 + 0.0 + 4.0) / 3.0);
  EXPECT_NEAR(nr.norm.c_sep, expect, 1e-12);
  EXPECT_FALSE(nr.norm.sep_degenerate);
}

TEST(Normalizers, PerfectFitIsDegenerate) {
  Eigen::MatrixXd y(3, 4);
  y << 2, 3, 4, 0, 1, 2, 3, 0, 3, 4, 5, 0;
  const auto p = fixtures::make_panel(y, {3, -1, -1});
  const auto cfg = make_event_config(p);
  SolveOptions o;
  o.lambda = 0;
  const auto nr = normalizers(p, cfg, donor_sets(p, cfg), o);
  EXPECT_TRUE(nr.norm.sep_degenerate);
  EXPECT_EQ(nr.norm.c_sep, 1.0);
}

TEST(Normalizers, MatchesGridSearch) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 5; ++rep) {
    auto inst = fixtures::random_instance(rng, 4, 1, 8, 1, 4, 6, 0);
    SolveOptions o;
    o.lambda = 0;
    const auto nr = normalizers(inst.panel, inst.cfg, inst.donors, o);
    const auto sp = specs(inst.panel, inst.cfg);
    const double best = oracle::grid_minimum(inst.panel.outcomes, sp, {inst.donors[0]}, 0.0, 1.0, 1.0, 0.0, 200);
    EXPECT_LE(nr.norm.c_sep * nr.norm.c_sep, best + 1e-12);
    EXPECT_LE(std::sqrt(best) - nr.norm.c_sep, 1e-3);
  }
}
