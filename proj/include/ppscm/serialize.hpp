#pragma once

// JSON and CSV renderings of fits, effects, frontiers, inference and Monte
// Carlo output.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppscm/balance.hpp"
#include "ppscm/effects.hpp"
#include "ppscm/inference.hpp"
#include "ppscm/panel.hpp"
#include "ppscm/simulate.hpp"
#include "ppscm/solver.hpp"
#include "ppscm/tuning.hpp"

namespace ppscm {

using nlohmann::json;

inline constexpr double kWeightCutoff = 1e-10;

inline json to_json(const SolveOptions& o) {
  return {{"nu", o.nu},           {"lambda", o.lambda},     {"xi", o.xi},
          {"intercept", o.intercept}, {"cohort_mode", o.cohort_mode}, {"tol", o.tol},
          {"max_iter", o.max_iter}, {"polish", o.polish}};
}

inline json to_json(const Normalization& n) {
  return {{"c_sep", n.c_sep},
          {"c_pool", n.c_pool},
          {"sep_degenerate", n.sep_degenerate},
          {"pool_degenerate", n.pool_degenerate}};
}

inline json to_json(const BalanceReport& b, const PanelData& panel, const EventConfig& cfg) {
  json per_unit = json::array();
  for (std::size_t j = 0; j < cfg.num_treated(); ++j)
    per_unit.push_back({{"unit", panel.unit_ids[cfg.treated[j]]},
                        {"lags", cfg.lags[j]},
                        {"q", b.per_unit_q(static_cast<Eigen::Index>(j))}});
  json out = {{"q_sep", b.q_sep},
              {"q_pool", b.q_pool},
              {"q_sep_norm", b.q_sep_norm},
              {"q_pool_norm", b.q_pool_norm},
              {"per_unit", per_unit},
              {"normalization", to_json(b.norm)},
              {"pooled_divisor", "J"}};
  if (b.q_sep_x) out["q_sep_x"] = *b.q_sep_x;
  if (b.q_pool_x) out["q_pool_x"] = *b.q_pool_x;
  return out;
}

inline json weight_triplets(const WeightMatrix& w, const PanelData& panel, const EventConfig& cfg) {
  json out = json::array();
  for (Eigen::Index j = 0; j < w.num_columns(); ++j)
    for (Eigen::Index i = 0; i < w.num_units(); ++i)
      if (std::abs(w.values(i, j)) >= kWeightCutoff)
        out.push_back({{"treated_unit", panel.unit_ids[cfg.treated[static_cast<std::size_t>(j)]]},
                       {"donor_unit", panel.unit_ids[static_cast<std::size_t>(i)]},
                       {"weight", w.values(i, j)}});
  return out;
}

inline json to_json(const FitResult& fit, const PanelData& panel, const EventConfig& cfg) {
  json out = {{"options", to_json(fit.options)},
              {"normalization", to_json(fit.normalization)},
              {"objective", fit.objective},
              {"iterations", fit.iterations},
              {"converged", fit.converged},
              {"polished", fit.polished},
              {"frobenius_norm", fit.frobenius_norm},
              {"horizon", cfg.horizon},
              {"weights", weight_triplets(fit.unit_weights, panel, cfg)},
              {"balance", to_json(fit.balance, panel, cfg)}};
  if (fit.options.cohort_mode) {
    json cohorts = json::array();
    for (std::size_t c = 0; c < fit.column_members.size(); ++c) {
      const auto first = cfg.treated[fit.column_members[c].front()];
      json members = json::array();
      for (auto j : fit.column_members[c]) members.push_back(panel.unit_ids[cfg.treated[j]]);
      json weights = json::array();
      for (Eigen::Index i = 0; i < fit.weights.num_units(); ++i) {
        const double v = fit.weights.values(i, static_cast<Eigen::Index>(c));
        if (std::abs(v) >= kWeightCutoff)
          weights.push_back({{"donor_unit", panel.unit_ids[static_cast<std::size_t>(i)]}, {"weight", v}});
      }
      cohorts.push_back({{"treat_time", panel.times[static_cast<std::size_t>(panel.treat_index[first])]},
                         {"members", members},
                         {"weights", weights}});
    }
    out["cohorts"] = cohorts;
  }
  if (fit.intercepts) {
    json a = json::array();
    for (std::size_t j = 0; j < cfg.num_treated(); ++j)
      a.push_back({{"treated_unit", panel.unit_ids[cfg.treated[j]]},
                   {"alpha", (*fit.intercepts)(static_cast<Eigen::Index>(j))}});
    out["intercepts"] = a;
  }
  return out;
}

/// Full tau matrix. Cells before a unit's lag window are null in `tau` and
/// zero in `tau_padded`, the convention used by the imbalance measures.
inline json to_json(const EffectEstimates& e, const PanelData& panel, const EventConfig& cfg) {
  json units = json::array();
  for (std::size_t j = 0; j < cfg.num_treated(); ++j) {
    json row = json::array(), padded = json::array();
    for (Eigen::Index c = 0; c < e.tau.cols(); ++c) {
      const double v = e.tau(static_cast<Eigen::Index>(j), c);
      row.push_back(std::isnan(v) ? json(nullptr) : json(v));
      padded.push_back(std::isnan(v) ? 0.0 : v);
    }
    units.push_back({{"unit", panel.unit_ids[cfg.treated[j]]},
                     {"tau", row},
                     {"tau_padded", padded},
                     {"post_average", e.per_unit_post_avg(static_cast<Eigen::Index>(j))}});
  }
  json att_k = json::array();
  for (Eigen::Index c = 0; c < e.att_k.size(); ++c) att_k.push_back(e.att_k(c));
  return {{"event_times", e.event_times},
          {"att_k", att_k},
          {"n_units", e.n_units},
          {"att", e.att},
          {"att_divisor", e.include_onset ? "K+1 (k = 0..K)" : "K (k = 1..K)"},
          {"units", units}};
}

inline void write_effects_csv(std::ostream& out, const EffectEstimates& e) {
  out << "event_time,att,n_units\n";
  for (std::size_t c = 0; c < e.event_times.size(); ++c)
    out << e.event_times[c] << ',' << detail::format_double(e.att_k(static_cast<Eigen::Index>(c)))
        << ',' << e.n_units[c] << '\n';
}

inline void write_frontier_csv(std::ostream& out, const std::vector<FrontierPoint>& pts) {
  out << "nu,q_sep,q_pool,q_sep_norm,q_pool_norm,att\n";
  for (const auto& p : pts) {
    if (!p.ok) {
      out << detail::format_double(p.nu) << ",NA,NA,NA,NA,NA\n";
      continue;
    }
    out << detail::format_double(p.nu) << ',' << detail::format_double(p.q_sep) << ','
        << detail::format_double(p.q_pool) << ',' << detail::format_double(p.q_sep_norm) << ','
        << detail::format_double(p.q_pool_norm) << ',' << detail::format_double(p.att) << '\n';
  }
}

inline json to_json(const std::vector<FrontierPoint>& pts) {
  json out = json::array();
  for (const auto& p : pts) {
    json j = {{"nu", p.nu}, {"ok", p.ok}};
    if (p.ok) {
      j.update({{"q_sep", p.q_sep},
                {"q_pool", p.q_pool},
                {"q_sep_norm", p.q_sep_norm},
                {"q_pool_norm", p.q_pool_norm},
                {"att", p.att},
                {"converged", p.converged}});
    } else {
      j["error"] = p.error;
    }
    out.push_back(j);
  }
  return out;
}

inline json to_json(const InferenceResult& r) {
  json out = {{"k", r.k},
              {"att_k", r.att_k},
              {"ci_lower", r.ci_lower},
              {"ci_upper", r.ci_upper},
              {"method", to_string(r.method)},
              {"draws", r.draws},
              {"alpha_level", r.alpha_level}};
  if (r.method == InferenceMethod::WildBootstrap) {
    out["seed"] = r.seed;
    out["interval"] = "basic bootstrap [ATT - q(1-a/2), ATT - q(a/2)]";
  } else {
    out["skipped"] = r.skipped;
    out["interval"] = "ATT +/- 2 sqrt(V)";
  }
  if (r.se) out["se"] = *r.se;
  return out;
}

inline json to_json(const McReport& r) {
  json out = {{"estimator", r.estimator},
              {"replications", r.replications},
              {"mad_att", r.mad_att},
              {"bias_att", r.bias_att},
              {"rmse_att", r.rmse_att},
              {"mad_unit", r.mad_unit},
              {"rmse_unit", r.rmse_unit},
              {"se_mad_att", r.se_mad_att},
              {"se_bias_att", r.se_bias_att},
              {"se_mad_unit", r.se_mad_unit},
              {"coverage_k", r.coverage_k},
              {"mean_nu", r.mean_nu},
              {"mean_treated", r.mean_treated},
              {"seed", r.seed}};
  if (r.bound_exceed_rate) {
    out["bound_exceed_rate"] = *r.bound_exceed_rate;
    out["se_bound_exceed_rate"] = *r.se_bound_exceed_rate;
  }
  return out;
}

inline void write_mc_records_csv(std::ostream& out, const std::vector<McRecord>& records) {
  out << "rep,estimator,nu,att_hat,att_true,mad_unit,num_treated,seed\n";
  for (const auto& r : records)
    out << r.rep << ',' << r.estimator << ',' << detail::format_double(r.nu) << ','
        << detail::format_double(r.att_hat) << ',' << detail::format_double(r.att_true) << ','
        << detail::format_double(r.mad_unit) << ',' << r.num_treated << ',' << r.seed << '\n';
}

inline json to_json(const DgpSpec& d) {
  json out = {{"kind", to_string(d.kind)}, {"N", d.N}, {"T", d.T}, {"first_time", d.first_time},
              {"intercept", d.intercept}, {"noise_sd", d.noise_sd}};
  if (d.kind == DgpKind::Ar) {
    out["ar_coefs_mean"] = {d.ar_coefs_mean(0), d.ar_coefs_mean(1), d.ar_coefs_mean(2)};
    out["ar_coefs_sd"] = d.ar_coefs_sd;
    out["ar_sd_inflation"] = d.ar_sd_inflation;
  } else {
    json cov = json::array();
    for (Eigen::Index r = 0; r < d.unit_cov.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < d.unit_cov.cols(); ++c) row.push_back(d.unit_cov(r, c));
      cov.push_back(row);
    }
    out["unit_cov"] = cov;
  }
  return out;
}

}  // namespace ppscm
