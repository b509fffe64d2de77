#pragma once

// Choice of nu, the balance possibility frontier and the error bound
// calculators for the autoregressive and linear factor models.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ppscm/effects.hpp"
#include "ppscm/error.hpp"
#include "ppscm/panel.hpp"
#include "ppscm/solver.hpp"

namespace ppscm {

/// sqrt(L) q_pool(G_sep) / ((1/J) sum_j sqrt(L_j) q_j(G_sep)), 0 when every
/// separate fit is perfect.
inline double nu_heuristic(const EventConfig& cfg, const FitResult& separate) {
  const auto J = cfg.num_treated();
  double denom = 0;
  for (std::size_t j = 0; j < J; ++j)
    denom += std::sqrt(static_cast<double>(cfg.lags[j])) *
             separate.balance.per_unit_q(static_cast<Eigen::Index>(j));
  denom /= static_cast<double>(J);
  if (!(denom > 0)) return 0.0;
  const double v = std::sqrt(static_cast<double>(cfg.max_lag())) * separate.balance.q_pool / denom;
  return std::clamp(v, 0.0, 1.0);
}

struct PipelineResult {
  NormalizerResult normalizers;
  double nu_hat = 0;
  double nu = 0;
  bool nu_from_heuristic = true;
  FitResult fit;
};

/// Normalisers, then nu (explicit or heuristic), then the weights.
inline PipelineResult run_pipeline(const PanelData& panel, const EventConfig& cfg,
                                   const DonorSets& donors, const SolveOptions& options,
                                   std::optional<double> nu = std::nullopt) {
  PipelineResult out;
  out.normalizers = normalizers(panel, cfg, donors, options);
  out.nu_hat = nu_heuristic(cfg, out.normalizers.separate_fit);
  out.nu_from_heuristic = !nu.has_value();
  out.nu = nu.value_or(out.nu_hat);
  SolveOptions o = options;
  o.nu = out.nu;
  out.fit = solve(panel, cfg, donors, o, out.normalizers.norm);
  return out;
}

struct FrontierPoint {
  double nu = 0;
  double q_sep = 0;
  double q_pool = 0;
  double q_sep_norm = 0;
  double q_pool_norm = 0;
  double att = 0;
  bool converged = false;
  bool ok = true;
  std::string error;
};

inline std::vector<double> default_nu_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 19; ++i) g.push_back(0.05 * i);
  g.push_back(0.99);
  g.push_back(1.0);
  return g;
}

/// `interior` evenly spaced points strictly inside (0, 1) plus both ends.
inline std::vector<double> interior_nu_grid(int interior) {
  std::vector<double> g{0.0};
  for (int i = 1; i <= interior; ++i) g.push_back(static_cast<double>(i) / (interior + 1));
  g.push_back(1.0);
  return g;
}

inline std::vector<double> normalise_grid(std::vector<double> grid) {
  for (double v : grid)
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::InvalidConfig, "nu grid values must lie in [0, 1]");
  grid.push_back(0.0);
  grid.push_back(1.0);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

/// One solve per grid value under common normalisers, each warm-started
/// from the previous point.
inline std::vector<FrontierPoint> trace_frontier(const PanelData& panel, const EventConfig& cfg,
                                                 const DonorSets& donors,
                                                 const std::vector<double>& nu_grid,
                                                 const SolveOptions& options,
                                                 const EffectOptions& effect_options = {},
                                                 bool warm_start = true,
                                                 const Normalization* fixed_norm = nullptr) {
  const auto grid = normalise_grid(nu_grid);
  const Normalization norm = fixed_norm ? *fixed_norm : normalizers(panel, cfg, donors, options).norm;
  std::vector<FrontierPoint> out;
  std::optional<WeightMatrix> previous;
  for (double nu : grid) {
    FrontierPoint p;
    p.nu = nu;
    try {
      SolveOptions o = options;
      o.nu = nu;
      const auto fit = solve(panel, cfg, donors, o, norm, warm_start && previous ? &*previous : nullptr);
      p.q_sep = fit.balance.q_sep;
      p.q_pool = fit.balance.q_pool;
      p.q_sep_norm = fit.balance.q_sep_norm;
      p.q_pool_norm = fit.balance.q_pool_norm;
      p.att = estimate_effects(panel, cfg, fit, effect_options).att;
      p.converged = fit.converged;
      previous = fit.weights;
    } catch (const Error& e) {
      p.ok = false;
      p.error = e.what();
    }
    out.push_back(p);
  }
  return out;
}

/// Interior frontier point whose local slope (central differences in the
/// normalised coordinates) is closest to the slope between the endpoints.
inline std::optional<double> tangent_nu(const std::vector<FrontierPoint>& frontier) {
  std::vector<FrontierPoint> pts;
  for (const auto& p : frontier)
    if (p.ok) pts.push_back(p);
  if (pts.size() < 3) return std::nullopt;
  const auto& a = pts.front();
  const auto& b = pts.back();
  const double dx = b.q_sep_norm - a.q_sep_norm;
  if (!(std::abs(dx) > 0)) return std::nullopt;
  const double target = (b.q_pool_norm - a.q_pool_norm) / dx;
  std::optional<double> best;
  double best_gap = 0;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const double run = pts[i + 1].q_sep_norm - pts[i - 1].q_sep_norm;
    if (!(std::abs(run) > 0)) continue;
    const double slope = (pts[i + 1].q_pool_norm - pts[i - 1].q_pool_norm) / run;
    const double gap = std::abs(slope - target);
    if (!best || gap < best_gap) {
      best = pts[i].nu;
      best_gap = gap;
    }
  }
  return best;
}

struct BoundInputs {
  Eigen::VectorXd rho_bar;  // autoregressive model
  Eigen::VectorXd mu_bar;   // factor model
  double s = 0;             // S_rho or S_k
  double sigma = 1;
  double delta = 2;
  double M = 1;
  int F = 1;
};

/// a^2 / (a^2 + b^2) with a = |rho_bar| q_pool, b = S_rho q_sep at the
/// separate fit.
inline double oracle_nu_ar(const BoundInputs& in, const FitResult& separate) {
  const double a = in.rho_bar.norm() * separate.balance.q_pool;
  const double b = in.s * separate.balance.q_sep;
  if (a == 0 && b == 0) fail(ErrorKind::BothZero, "oracle nu undefined: both fit terms are zero");
  if (b == 0) return 1.0;
  return a * a / (a * a + b * b);
}

inline double bound_ar(const BoundInputs& in, int L, std::size_t J, double q_pool, double q_sep,
                       double frobenius) {
  const double sl = std::sqrt(static_cast<double>(L));
  return sl * in.rho_bar.norm() * q_pool + sl * in.s * q_sep +
         in.delta * in.sigma / std::sqrt(static_cast<double>(J)) * (1 + frobenius);
}

inline double bound_ar(const BoundInputs& in, int L, std::size_t J, const FitResult& fit) {
  return bound_ar(in, L, J, fit.balance.q_pool, fit.balance.q_sep, fit.frobenius_norm);
}

inline double bound_lfm(const BoundInputs& in, int L, std::size_t J, std::size_t N, double q_pool,
                        double q_sep, double frobenius) {
  const double nj = static_cast<double>(N) * static_cast<double>(J);
  const double approx = in.sigma * in.M * in.M * in.F / std::sqrt(static_cast<double>(L)) *
                        (3 * in.delta + 2 * std::sqrt(std::log(nj)));
  return in.mu_bar.norm() * q_pool + in.s * q_sep + approx +
         in.delta * in.sigma / std::sqrt(static_cast<double>(J)) * (1 + frobenius);
}

inline double bound_lfm(const BoundInputs& in, int L, std::size_t J, std::size_t N,
                        const FitResult& fit) {
  return bound_lfm(in, L, J, N, fit.balance.q_pool, fit.balance.q_sep, fit.frobenius_norm);
}

}  // namespace ppscm
