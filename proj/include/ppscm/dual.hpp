#pragma once

// Dual variables of the partially pooled problem recovered from a primal
// solution. The implied weights are compared with the primal weights and the
// dual objective with the primal objective.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "ppscm/error.hpp"
#include "ppscm/panel.hpp"
#include "ppscm/problem.hpp"
#include "ppscm/simplex.hpp"
#include "ppscm/solver.hpp"

namespace ppscm {

struct DualSolution {
  Eigen::VectorXd alpha_dual;  // J
  Eigen::MatrixXd beta;        // L x J
  Eigen::VectorXd mu_beta;     // L
};

struct DualCheck {
  DualSolution dual;
  /// max_ij |gamma_ij - [alpha_j + sum_l beta_lj Y_{i,T_j-l}]_+|
  double max_violation = 0;
  double primal_objective = 0;
  double dual_objective = 0;
  [[nodiscard]] double gap() const { return primal_objective - dual_objective; }
};

inline DualCheck dual_check(const PanelData& panel, const EventConfig& cfg, const DonorSets& donors,
                            const FitResult& fit) {
  const auto& o = fit.options;
  if (!(o.lambda > 0)) fail(ErrorKind::RegimeUnsupported, "dual check requires lambda > 0");
  if (!cfg.uniform_lags()) fail(ErrorKind::RegimeUnsupported, "dual check requires equal lags");
  if (o.xi > 0) fail(ErrorKind::RegimeUnsupported, "dual check does not cover covariates");
  if (o.cohort_mode) fail(ErrorKind::RegimeUnsupported, "dual check does not cover cohorts");

  DesignScaling scaling;
  scaling.a_sep = (1 - o.nu) / (fit.normalization.c_sep * fit.normalization.c_sep);
  scaling.a_pool = o.nu / (fit.normalization.c_pool * fit.normalization.c_pool);
  scaling.ridge = o.lambda;
  const auto d = build_design(panel, cfg, donors, o, scaling);
  const auto J = d.num_columns();
  const int L = d.max_lag;
  const double lambda = o.lambda;
  const double G = d.divisor();

  ColumnVectors x(J);
  for (std::size_t c = 0; c < J; ++c) {
    x[c].resize(static_cast<Eigen::Index>(d.columns[c].donors.size()));
    for (std::size_t k = 0; k < d.columns[c].donors.size(); ++k)
      x[c](static_cast<Eigen::Index>(k)) = fit.weights.values(
          static_cast<Eigen::Index>(d.columns[c].donors[k]), static_cast<Eigen::Index>(c));
  }
  const auto r = residuals(d, x, true);
  const double ws = d.a_sep / (G * L);
  const double wp = d.a_pool / L;
  const Eigen::VectorXd m = 2.0 * wp * r.pooled;

  DualCheck out;
  out.primal_objective = objective(d, x);
  out.dual.alpha_dual.resize(static_cast<Eigen::Index>(J));
  out.dual.beta.resize(L, static_cast<Eigen::Index>(J));
  out.dual.mu_beta = m / (2.0 * lambda * G);

  Eigen::VectorXd pooled_target = Eigen::VectorXd::Zero(L);
  for (const auto& col : d.columns) pooled_target += col.target / G;
  double dual = m.dot(pooled_target);
  dual -= wp > 0 ? m.squaredNorm() / (4.0 * wp) : 0.0;

  for (std::size_t c = 0; c < J; ++c) {
    const auto& col = d.columns[c];
    const Eigen::VectorXd zeta = 2.0 * ws * r.column[c];
    const Eigen::VectorXd slope = zeta + m / G;
    const Eigen::VectorXd v = col.donor_rows.transpose() * slope;
    const double alpha = -simplex_threshold(v, 2.0 * lambda * col.total);
    const Eigen::VectorXd implied = ((v.array() + alpha).max(0.0) / (2.0 * lambda)).matrix();
    out.max_violation = std::max(out.max_violation, (implied - x[c]).cwiseAbs().maxCoeff());
    out.dual.alpha_dual(static_cast<Eigen::Index>(c)) = alpha / (2.0 * lambda);
    out.dual.beta.col(static_cast<Eigen::Index>(c)) = slope / (2.0 * lambda);

    dual += zeta.dot(col.target) + alpha * col.total;
    dual -= ws > 0 ? zeta.squaredNorm() / (4.0 * ws) : 0.0;
    dual -= (v.array() + alpha).max(0.0).square().sum() / (4.0 * lambda);
  }
  out.dual_objective = dual;
  return out;
}

}  // namespace ppscm
