#pragma once

// Unit-level and averaged treatment effect estimates at event times -L..K.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "ppscm/error.hpp"
#include "ppscm/panel.hpp"
#include "ppscm/solver.hpp"

namespace ppscm {

struct EffectOptions {
  /// Average the post-treatment effects over k = 0..K (divisor K + 1);
  /// otherwise over k = 1..K (divisor K).
  bool include_onset = true;
};

struct EffectEstimates {
  std::vector<int> event_times;  // -L..K
  /// J x (L + K + 1); NaN where k < -L_j.
  Eigen::MatrixXd tau;
  Eigen::VectorXd att_k;
  std::vector<int> n_units;
  double att = 0;
  Eigen::VectorXd per_unit_post_avg;
  int max_lag = 0;
  int horizon = 0;
  bool include_onset = true;

  [[nodiscard]] Eigen::Index column_of(int k) const {
    if (k > horizon || k < -max_lag)
      fail(ErrorKind::EventOutOfRange, "event time " + std::to_string(k) + " is outside [" +
                                           std::to_string(-max_lag) + ", " +
                                           std::to_string(horizon) + "]");
    return k + max_lag;
  }
  [[nodiscard]] double att_at(int k) const { return att_k(column_of(k)); }
  [[nodiscard]] bool available(std::size_t j, int k) const {
    return !std::isnan(tau(static_cast<Eigen::Index>(j), column_of(k)));
  }
};

/// Treated-minus-synthetic gap Y_{j,T_j+k} - alpha_j - sum_i gamma_ij Y_{i,T_j+k}.
inline double unit_effect(const PanelData& panel, const EventConfig& cfg, const FitResult& fit,
                          std::size_t j, int k) {
  const int t = panel.treat_index[cfg.treated[j]] + k;
  if (k > cfg.horizon || t < 0)
    fail(ErrorKind::EventOutOfRange, "event time " + std::to_string(k) + " is not observed");
  const auto unit = static_cast<Eigen::Index>(cfg.treated[j]);
  const double alpha = fit.intercepts ? (*fit.intercepts)(static_cast<Eigen::Index>(j)) : 0.0;
  return panel.outcomes(unit, t) - alpha -
         fit.unit_weights.column(static_cast<Eigen::Index>(j)).dot(panel.outcomes.col(t));
}

inline EffectEstimates estimate_effects(const PanelData& panel, const EventConfig& cfg,
                                        const FitResult& fit, const EffectOptions& options = {}) {
  EffectEstimates e;
  e.max_lag = cfg.max_lag();
  e.horizon = cfg.horizon;
  e.include_onset = options.include_onset;
  const int width = e.max_lag + cfg.horizon + 1;
  const auto J = cfg.num_treated();
  e.tau = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(J), width,
                                    std::numeric_limits<double>::quiet_NaN());
  e.att_k = Eigen::VectorXd::Zero(width);
  e.n_units.assign(static_cast<std::size_t>(width), 0);
  for (int c = 0; c < width; ++c) {
    const int k = c - e.max_lag;
    e.event_times.push_back(k);
    for (std::size_t j = 0; j < J; ++j) {
      if (k < -cfg.lags[j]) continue;
      const double v = unit_effect(panel, cfg, fit, j, k);
      e.tau(static_cast<Eigen::Index>(j), c) = v;
      e.att_k(c) += v;
      ++e.n_units[static_cast<std::size_t>(c)];
    }
    if (e.n_units[static_cast<std::size_t>(c)] > 0) e.att_k(c) /= e.n_units[static_cast<std::size_t>(c)];
  }
  const int first = options.include_onset || cfg.horizon == 0 ? 0 : 1;
  const double count = cfg.horizon - first + 1;
  e.att = e.att_k.segment(e.max_lag + first, cfg.horizon - first + 1).sum() / count;
  e.per_unit_post_avg =
      e.tau.middleCols(e.max_lag + first, cfg.horizon - first + 1).rowwise().sum() / count;
  return e;
}

}  // namespace ppscm
