#pragma once

// In-time placebo checks and trimming of poorly fit treated units.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ppscm/effects.hpp"
#include "ppscm/error.hpp"
#include "ppscm/panel.hpp"
#include "ppscm/solver.hpp"
#include "ppscm/tuning.hpp"

namespace ppscm {

struct PlaceboResult {
  PanelData shifted;
  EventConfig cfg;
  PipelineResult pipeline;
  EffectEstimates effects;
};

/// Re-indexes every analysed treated unit to T_j - shift and re-runs the
/// pipeline. Horizon and donor pools are those of the true schedule.
inline PlaceboResult placebo_in_time(const PanelData& panel, const EventConfig& cfg, int shift,
                                     const SolveOptions& options,
                                     std::optional<double> nu = std::nullopt,
                                     const EffectOptions& effect_options = {}) {
  if (shift < 0) fail(ErrorKind::InvalidConfig, "placebo shift must be nonnegative");
  validate(panel, cfg);
  const auto donors = donor_sets(panel, cfg);
  PlaceboResult out;
  out.shifted = panel;
  out.cfg = cfg;
  for (std::size_t j = 0; j < cfg.num_treated(); ++j) {
    const auto unit = cfg.treated[j];
    const int moved = panel.treat_index[unit] - shift;
    if (moved < 1)
      fail(ErrorKind::InsufficientPrePeriods,
           "unit " + panel.unit_ids[unit] + " has fewer than " + std::to_string(shift + 1) +
               " pre-treatment periods");
    out.shifted.treat_index[unit] = moved;
    out.cfg.lags[j] = std::min(cfg.lags[j], moved);
  }
  validate(out.shifted, out.cfg);
  out.pipeline = run_pipeline(out.shifted, out.cfg, donors, options, nu);
  out.effects = estimate_effects(out.shifted, out.cfg, out.pipeline.fit, effect_options);
  return out;
}

struct TrimResult {
  EventConfig cfg;
  PipelineResult pipeline;
  EffectEstimates effects;
  std::vector<std::size_t> dropped;  // panel unit indices, worst fit first
};

/// Drops the `drop_count` treated units with the largest q_j under `fit`
/// and re-runs the pipeline on the rest. Dropped units stay in the panel.
inline TrimResult trim_and_refit(const PanelData& panel, const EventConfig& cfg,
                                 const FitResult& fit, int drop_count, const SolveOptions& options,
                                 std::optional<double> nu = std::nullopt,
                                 const EffectOptions& effect_options = {}) {
  const auto J = cfg.num_treated();
  if (drop_count < 0 || static_cast<std::size_t>(drop_count) >= J)
    fail(ErrorKind::InvalidConfig, "drop count must lie in [0, J - 1]");
  std::vector<std::size_t> order(J);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& q = fit.balance.per_unit_q;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return q(static_cast<Eigen::Index>(a)) > q(static_cast<Eigen::Index>(b));
  });
  std::vector<bool> drop(J, false);
  TrimResult out;
  for (int k = 0; k < drop_count; ++k) {
    drop[order[static_cast<std::size_t>(k)]] = true;
    out.dropped.push_back(cfg.treated[order[static_cast<std::size_t>(k)]]);
  }
  out.cfg.horizon = cfg.horizon;
  for (std::size_t j = 0; j < J; ++j)
    if (!drop[j]) {
      out.cfg.treated.push_back(cfg.treated[j]);
      out.cfg.lags.push_back(cfg.lags[j]);
    }
  validate(panel, out.cfg);
  const auto donors = donor_sets(panel, out.cfg);
  out.pipeline = run_pipeline(panel, out.cfg, donors, options, nu);
  out.effects = estimate_effects(panel, out.cfg, out.pipeline.fit, effect_options);
  return out;
}

}  // namespace ppscm
