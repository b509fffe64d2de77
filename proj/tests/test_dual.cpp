#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "ppscm/dual.hpp"
#include "ppscm/solver.hpp"

using namespace ppscm;

namespace {

/// Weights implied by the dual variables, rebuilt from the raw outcomes.
Eigen::MatrixXd implied_weights(const PanelData& p, const EventConfig& cfg, const DonorSets& donors,
                                const DualSolution& dual) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p.num_units()),
                                            static_cast<Eigen::Index>(cfg.num_treated()));
  for (std::size_t j = 0; j < cfg.num_treated(); ++j) {
    const int t0 = p.treat_index[cfg.treated[j]];
    for (auto i : donors[j]) {
      double v = dual.alpha_dual(static_cast<Eigen::Index>(j));
      for (int l = 1; l <= cfg.lags[j]; ++l)
        v += dual.beta(l - 1, static_cast<Eigen::Index>(j)) * p.outcomes(static_cast<Eigen::Index>(i), t0 - l);
      g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::max(0.0, v);
    }
  }
  return g;
}

fixtures::Instance uniform_lag_instance(std::mt19937_64& rng, int N, int J) {
  auto inst = fixtures::random_instance(rng, N, J, 12, 1, 3, 4, 5);
  return inst;
}

}  // namespace

TEST(Dual, ImpliedWeightsReproducePrimal) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    auto inst = uniform_lag_instance(rng, 8, 3);
    SolveOptions o;
    o.nu = 0.1 * rep;
    o.lambda = 1e-2;
    o.tol = 1e-12;
    const auto nr = normalizers(inst.panel, inst.cfg, inst.donors, o);
    const auto fit = solve(inst.panel, inst.cfg, inst.donors, o, nr.norm);
    const auto chk = dual_check(inst.panel, inst.cfg, inst.donors, fit);
    EXPECT_LE(chk.max_violation, 1e-6);
    const auto g = implied_weights(inst.panel, inst.cfg, inst.donors, chk.dual);
    EXPECT_LE((g - fit.weights.values).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NEAR(chk.gap(), 0.0, 1e-8);
  }
}

TEST(Dual, FullPoolingSharesBeta) {
  std::mt19937_64 rng(2);
  auto inst = uniform_lag_instance(rng, 9, 3);
  SolveOptions o;
  o.nu = 1.0;
  o.lambda = 1e-2;
  const auto nr = normalizers(inst.panel, inst.cfg, inst.donors, o);
  const auto chk = dual_check(inst.panel, inst.cfg, inst.donors, solve(inst.panel, inst.cfg, inst.donors, o, nr.norm));
  for (Eigen::Index j = 0; j < chk.dual.beta.cols(); ++j)
    EXPECT_LT((chk.dual.beta.col(j) - chk.dual.mu_beta).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Dual, SeparateFitHasNoPooledShrinkage) {
  std::mt19937_64 rng(3);
  auto inst = uniform_lag_instance(rng, 9, 3);
  SolveOptions o;
  o.nu = 0.0;
  o.lambda = 1e-2;
  const auto nr = normalizers(inst.panel, inst.cfg, inst.donors, o);
  const auto chk = dual_check(inst.panel, inst.cfg, inst.donors, solve(inst.panel, inst.cfg, inst.donors, o, nr.norm));
  EXPECT_LT(chk.dual.mu_beta.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Dual, UnsupportedRegimes) {
  std::mt19937_64 rng(4);
  auto inst = uniform_lag_instance(rng, 8, 2);
  SolveOptions o;
  o.lambda = 0;
  auto fit = solve(inst.panel, inst.cfg, inst.donors, o, Normalization{});
  try {
    dual_check(inst.panel, inst.cfg, inst.donors, fit);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RegimeUnsupported);
  }
  auto ragged = inst;
  ragged.cfg.lags = {2, 3};
  ASSERT_FALSE(ragged.cfg.uniform_lags());
  o.lambda = 1e-2;
  fit = solve(ragged.panel, ragged.cfg, ragged.donors, o, Normalization{});
  EXPECT_THROW(dual_check(ragged.panel, ragged.cfg, ragged.donors, fit), Error);
}
