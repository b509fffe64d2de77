#pragma once

// Pre-treatment imbalance measures for an arbitrary donor weight matrix.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>

#include "ppscm/error.hpp"
#include "ppscm/panel.hpp"

namespace ppscm {

/// N x J donor weights, column j is the synthetic control of the j-th
/// analysed treated unit.
struct WeightMatrix {
  Eigen::MatrixXd values;

  WeightMatrix() = default;
  explicit WeightMatrix(Eigen::MatrixXd m) : values(std::move(m)) {}

  [[nodiscard]] Eigen::Index num_units() const { return values.rows(); }
  [[nodiscard]] Eigen::Index num_columns() const { return values.cols(); }
  [[nodiscard]] auto column(Eigen::Index j) const { return values.col(j); }
  [[nodiscard]] double frobenius_norm() const { return values.norm(); }
};

using Intercepts = Eigen::VectorXd;

/// Normalisation constants C^sep, C^pool. A zero constant is replaced by 1
/// and flagged so the normalised objective never divides by zero.
struct Normalization {
  double c_sep = 1.0;
  double c_pool = 1.0;
  bool sep_degenerate = false;
  bool pool_degenerate = false;
};

struct BalanceReport {
  double q_sep = 0;
  double q_pool = 0;
  double q_sep_norm = 0;
  double q_pool_norm = 0;
  Eigen::VectorXd per_unit_q;
  std::optional<double> q_sep_x;
  std::optional<double> q_pool_x;
  Normalization norm;
};

/// Placebo gaps Y_{j,T_j-l} - alpha_j - sum_i gamma_ij Y_{i,T_j-l}, l = 1..L_j.
inline Eigen::VectorXd pre_treatment_gaps(const PanelData& panel, const EventConfig& cfg,
                                          std::size_t j, const Eigen::Ref<const Eigen::VectorXd>& gamma_j,
                                          std::optional<double> alpha_j = std::nullopt) {
  const int t0 = panel.treat_index[cfg.treated[j]];
  const auto unit = cfg.treated[j];
  Eigen::VectorXd gaps(cfg.lags[j]);
  for (int l = 1; l <= cfg.lags[j]; ++l)
    gaps(l - 1) = panel.outcomes(unit, t0 - l) - alpha_j.value_or(0.0) -
                  gamma_j.dot(panel.outcomes.col(t0 - l));
  return gaps;
}

/// Root mean squared pre-treatment gap of one treated unit, q_j.
inline double q_unit(const PanelData& panel, const EventConfig& cfg, std::size_t j,
                     const Eigen::Ref<const Eigen::VectorXd>& gamma_j,
                     std::optional<double> alpha_j = std::nullopt) {
  const auto gaps = pre_treatment_gaps(panel, cfg, j, gamma_j, alpha_j);
  return std::sqrt(gaps.squaredNorm() / static_cast<double>(cfg.lags[j]));
}

namespace detail {
inline std::optional<double> alpha_of(const std::optional<Intercepts>& alpha, std::size_t j) {
  if (!alpha) return std::nullopt;
  return (*alpha)(static_cast<Eigen::Index>(j));
}
}  // namespace detail

/// Root mean square of the unit-level fits across treated units.
inline double q_sep(const PanelData& panel, const EventConfig& cfg, const WeightMatrix& gamma,
                    const std::optional<Intercepts>& alpha = std::nullopt) {
  double total = 0;
  for (std::size_t j = 0; j < cfg.num_treated(); ++j) {
    const double q = q_unit(panel, cfg, j, gamma.column(static_cast<Eigen::Index>(j)),
                            detail::alpha_of(alpha, j));
    total += q * q;
  }
  return std::sqrt(total / static_cast<double>(cfg.num_treated()));
}

/// Fit of the average treated unit. Lag l collects the units whose window
/// reaches l and always divides by J.
inline double q_pool(const PanelData& panel, const EventConfig& cfg, const WeightMatrix& gamma,
                     const std::optional<Intercepts>& alpha = std::nullopt) {
  const int max_lag = cfg.max_lag();
  const double J = static_cast<double>(cfg.num_treated());
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(max_lag);
  for (std::size_t j = 0; j < cfg.num_treated(); ++j)
    pooled.head(cfg.lags[j]) += pre_treatment_gaps(panel, cfg, j,
                                                   gamma.column(static_cast<Eigen::Index>(j)),
                                                   detail::alpha_of(alpha, j));
  pooled /= J;
  return std::sqrt(pooled.squaredNorm() / static_cast<double>(max_lag));
}

/// Unit-level and pooled covariate imbalance (q^sep_X, q^pool_X).
inline std::pair<double, double> q_covariates(const PanelData& panel, const EventConfig& cfg,
                                              const WeightMatrix& gamma) {
  if (!panel.has_covariates())
    fail(ErrorKind::NoCovariates, "panel has no covariates");
  const auto& x = *panel.covariates;
  const double J = static_cast<double>(cfg.num_treated());
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(x.cols());
  double sep = 0;
  for (std::size_t j = 0; j < cfg.num_treated(); ++j) {
    const Eigen::VectorXd gap =
        x.row(cfg.treated[j]).transpose() -
        x.transpose() * gamma.column(static_cast<Eigen::Index>(j));
    sep += gap.squaredNorm();
    pooled += gap;
  }
  return {std::sqrt(sep / J), (pooled / J).norm()};
}

inline BalanceReport balance_report(const PanelData& panel, const EventConfig& cfg,
                                    const WeightMatrix& gamma,
                                    const std::optional<Intercepts>& alpha,
                                    const Normalization& norm, bool with_covariates) {
  BalanceReport r;
  r.norm = norm;
  r.per_unit_q.resize(static_cast<Eigen::Index>(cfg.num_treated()));
  for (std::size_t j = 0; j < cfg.num_treated(); ++j)
    r.per_unit_q(static_cast<Eigen::Index>(j)) =
        q_unit(panel, cfg, j, gamma.column(static_cast<Eigen::Index>(j)), detail::alpha_of(alpha, j));
  r.q_sep = q_sep(panel, cfg, gamma, alpha);
  r.q_pool = q_pool(panel, cfg, gamma, alpha);
  r.q_sep_norm = r.q_sep / norm.c_sep;
  r.q_pool_norm = r.q_pool / norm.c_pool;
  if (with_covariates && panel.has_covariates()) {
    auto [sx, px] = q_covariates(panel, cfg, gamma);
    r.q_sep_x = sx;
    r.q_pool_x = px;
  }
  return r;
}

}  // namespace ppscm
