#pragma once

// Wild (multiplier) bootstrap intervals and leave-one-unit-out jackknife
// standard errors for ATT_k.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ppscm/effects.hpp"
#include "ppscm/error.hpp"
#include "ppscm/panel.hpp"
#include "ppscm/parallel.hpp"
#include "ppscm/solver.hpp"
#include "ppscm/tuning.hpp"

namespace ppscm {

enum class InferenceMethod { WildBootstrap, Jackknife };

[[nodiscard]] inline std::string to_string(InferenceMethod m) {
  return m == InferenceMethod::WildBootstrap ? "wild_bootstrap" : "jackknife";
}

struct InferenceResult {
  int k = 0;
  double att_k = 0;
  double ci_lower = 0;
  double ci_upper = 0;
  std::optional<double> se;
  InferenceMethod method = InferenceMethod::WildBootstrap;
  int draws = 0;
  int skipped = 0;
  double alpha_level = 0.05;
  std::uint64_t seed = 0;
};

/// Two-point multiplier distribution with mean 0 and unit second and third
/// moments.
struct MammenWeights {
  static double low() { return -(std::sqrt(5.0) - 1.0) / 2.0; }
  static double high() { return (std::sqrt(5.0) + 1.0) / 2.0; }
  static double p_low() { return (std::sqrt(5.0) + 1.0) / (2.0 * std::sqrt(5.0)); }
  static double p_high() { return (std::sqrt(5.0) - 1.0) / (2.0 * std::sqrt(5.0)); }

  template <class Rng>
  static double draw(Rng& rng) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return u < p_low() ? low() : high();
  }
};

/// Per-unit terms tau~_i whose sum over units is J * ATT_k. With an
/// intercept each outcome is taken relative to its mean over the lag window
/// of the treated unit it enters.
inline Eigen::VectorXd unit_contributions(const PanelData& panel, const EventConfig& cfg,
                                          const FitResult& fit, int k) {
  if (k > cfg.horizon) fail(ErrorKind::EventOutOfRange, "event time exceeds the horizon");
  const auto N = static_cast<Eigen::Index>(panel.num_units());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(N);
  for (std::size_t j = 0; j < cfg.num_treated(); ++j) {
    const int t0 = panel.treat_index[cfg.treated[j]];
    if (t0 + k < 0) fail(ErrorKind::EventOutOfRange, "event time precedes the panel");
    Eigen::VectorXd y = panel.outcomes.col(t0 + k);
    if (fit.intercepts) y -= panel.outcomes.middleCols(t0 - cfg.lags[j], cfg.lags[j]).rowwise().mean();
    Eigen::VectorXd coef = -fit.unit_weights.column(static_cast<Eigen::Index>(j));
    coef(static_cast<Eigen::Index>(cfg.treated[j])) += 1.0;
    out += coef.cwiseProduct(y);
  }
  return out;
}

/// Type 7 sample quantile (linear interpolation between order statistics).
inline double sample_quantile(std::vector<double> v, double p) {
  if (v.empty()) fail(ErrorKind::InvalidConfig, "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace detail {

/// Columns of `contrib` are per-unit terms of the targets; all targets share
/// the same multiplier draws.
inline std::vector<InferenceResult> bootstrap_targets(const Eigen::MatrixXd& contrib, double J,
                                                      const std::vector<int>& labels, int B,
                                                      double alpha_level, std::uint64_t seed) {
  if (B < 100) fail(ErrorKind::InvalidConfig, "bootstrap requires at least 100 draws");
  if (!(alpha_level > 0 && alpha_level < 1))
    fail(ErrorKind::InvalidConfig, "alpha level must lie in (0, 1)");
  const auto N = contrib.rows();
  const auto nk = contrib.cols();
  const Eigen::RowVectorXd att = contrib.colwise().sum() / J;
  const Eigen::MatrixXd centred = contrib.rowwise() - att;
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> stats(static_cast<std::size_t>(nk),
                                         std::vector<double>(static_cast<std::size_t>(B)));
  Eigen::RowVectorXd w(N);
  for (int b = 0; b < B; ++b) {
    for (Eigen::Index i = 0; i < N; ++i) w(i) = MammenWeights::draw(rng);
    const Eigen::RowVectorXd s = (w * centred) / J;
    for (Eigen::Index c = 0; c < nk; ++c) stats[static_cast<std::size_t>(c)][static_cast<std::size_t>(b)] = s(c);
  }
  std::vector<InferenceResult> out;
  for (Eigen::Index c = 0; c < nk; ++c) {
    const auto& st = stats[static_cast<std::size_t>(c)];
    InferenceResult r;
    r.k = labels[static_cast<std::size_t>(c)];
    r.att_k = att(c);
    r.ci_lower = att(c) - sample_quantile(st, 1 - alpha_level / 2);
    r.ci_upper = att(c) - sample_quantile(st, alpha_level / 2);
    r.method = InferenceMethod::WildBootstrap;
    r.draws = B;
    r.alpha_level = alpha_level;
    r.seed = seed;
    out.push_back(r);
  }
  return out;
}

}  // namespace detail

/// Basic bootstrap intervals [ATT - q_{1-a/2}, ATT - q_{a/2}] for each
/// requested event time. The same multiplier draws serve every k.
inline std::vector<InferenceResult> wild_bootstrap(const PanelData& panel, const EventConfig& cfg,
                                                   const FitResult& fit, const std::vector<int>& ks,
                                                   int B, double alpha_level, std::uint64_t seed) {
  Eigen::MatrixXd contrib(static_cast<Eigen::Index>(panel.num_units()),
                          static_cast<Eigen::Index>(ks.size()));
  for (std::size_t c = 0; c < ks.size(); ++c)
    contrib.col(static_cast<Eigen::Index>(c)) = unit_contributions(panel, cfg, fit, ks[c]);
  return detail::bootstrap_targets(contrib, static_cast<double>(cfg.num_treated()), ks, B,
                                   alpha_level, seed);
}

/// Interval for the post-period average ATT, reported with k = -1.
inline InferenceResult wild_bootstrap_att(const PanelData& panel, const EventConfig& cfg,
                                          const FitResult& fit, const EffectOptions& effect_options,
                                          int B, double alpha_level, std::uint64_t seed) {
  const int first = effect_options.include_onset || cfg.horizon == 0 ? 0 : 1;
  Eigen::MatrixXd contrib = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(panel.num_units()), 1);
  for (int k = first; k <= cfg.horizon; ++k) contrib.col(0) += unit_contributions(panel, cfg, fit, k);
  contrib /= static_cast<double>(cfg.horizon - first + 1);
  return detail::bootstrap_targets(contrib, static_cast<double>(cfg.num_treated()), {-1}, B,
                                   alpha_level, seed)
      .front();
}

inline InferenceResult wild_bootstrap_ci(const PanelData& panel, const EventConfig& cfg,
                                         const FitResult& fit, int k, int B = 1000,
                                         double alpha_level = 0.05, std::uint64_t seed = 0) {
  return wild_bootstrap(panel, cfg, fit, {k}, B, alpha_level, seed).front();
}

/// (n - 1)/n * sum (theta_i - mean)^2.
inline double jackknife_variance(const std::vector<double>& theta) {
  const double n = static_cast<double>(theta.size());
  if (theta.size() < 2) return 0.0;
  double mean = 0;
  for (double t : theta) mean += t;
  mean /= n;
  double ss = 0;
  for (double t : theta) ss += (t - mean) * (t - mean);
  return (n - 1) / n * ss;
}

struct JackknifeReplicates {
  /// Leave-one-out att_k per successful replicate, columns k = 0..K.
  std::vector<Eigen::VectorXd> att_k;
  std::vector<std::size_t> dropped_unit;
  int skipped = 0;
};

/// Drops each unit in turn and re-fits normalisers, intercepts and weights
/// with nu, lambda and xi held fixed. Deletions that leave a treated unit
/// without donors, or no treated units at all, are skipped.
inline JackknifeReplicates jackknife_replicates(const PanelData& panel, const EventConfig& cfg,
                                                const SolveOptions& options, int threads = 1) {
  const auto N = panel.num_units();
  std::vector<std::optional<Eigen::VectorXd>> results(N);
  parallel_for(N, threads, [&](std::size_t drop) {
    std::vector<std::size_t> keep, remap(N, N);
    for (std::size_t i = 0; i < N; ++i)
      if (i != drop) {
        remap[i] = keep.size();
        keep.push_back(i);
      }
    const auto reduced = subset_units(panel, keep);
    EventConfig sub;
    sub.horizon = cfg.horizon;
    for (std::size_t j = 0; j < cfg.num_treated(); ++j)
      if (cfg.treated[j] != drop) {
        sub.treated.push_back(remap[cfg.treated[j]]);
        sub.lags.push_back(cfg.lags[j]);
      }
    if (sub.treated.empty() || reduced.num_never_treated() == 0) return;
    try {
      const auto donors = donor_sets(reduced, sub);
      const auto nr = normalizers(reduced, sub, donors, options);
      const auto fit = solve(reduced, sub, donors, options, nr.norm);
      const auto e = estimate_effects(reduced, sub, fit);
      results[drop] = e.att_k.tail(cfg.horizon + 1);
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::NoDonors) throw;
    }
  });
  JackknifeReplicates out;
  for (std::size_t i = 0; i < N; ++i) {
    if (results[i]) {
      out.att_k.push_back(*results[i]);
      out.dropped_unit.push_back(i);
    } else {
      ++out.skipped;
    }
  }
  return out;
}

namespace detail {

inline InferenceResult jackknife_summary(int k, double estimate, const std::vector<double>& theta,
                                         int skipped) {
  InferenceResult res;
  res.k = k;
  res.att_k = estimate;
  res.se = std::sqrt(jackknife_variance(theta));
  res.ci_lower = estimate - 2 * *res.se;
  res.ci_upper = estimate + 2 * *res.se;
  res.method = InferenceMethod::Jackknife;
  res.draws = static_cast<int>(theta.size());
  res.skipped = skipped;
  return res;
}

}  // namespace detail

/// Jackknife summaries for k = 0..K, CI = ATT_k +/- 2 sqrt(V_k).
inline std::vector<InferenceResult> jackknife(const JackknifeReplicates& reps,
                                              const EffectEstimates& full) {
  std::vector<InferenceResult> out;
  for (int k = 0; k <= full.horizon; ++k) {
    std::vector<double> theta;
    for (const auto& r : reps.att_k) theta.push_back(r(k));
    out.push_back(detail::jackknife_summary(k, full.att_at(k), theta, reps.skipped));
  }
  return out;
}

inline std::vector<InferenceResult> jackknife(const PanelData& panel, const EventConfig& cfg,
                                              const SolveOptions& options,
                                              const EffectEstimates& full, int threads = 1) {
  return jackknife(jackknife_replicates(panel, cfg, options, threads), full);
}

/// Jackknife interval for the post-period average ATT, reported with k = -1.
inline InferenceResult jackknife_att(const JackknifeReplicates& reps, const EffectEstimates& full) {
  const int first = full.include_onset || full.horizon == 0 ? 0 : 1;
  std::vector<double> theta;
  for (const auto& r : reps.att_k) theta.push_back(r.segment(first, full.horizon - first + 1).mean());
  return detail::jackknife_summary(-1, full.att, theta, reps.skipped);
}

inline InferenceResult jackknife_se(const PanelData& panel, const EventConfig& cfg,
                                    const SolveOptions& options, int k, int threads = 1) {
  if (k < 0 || k > cfg.horizon) fail(ErrorKind::EventOutOfRange, "event time outside 0..K");
  const auto donors = donor_sets(panel, cfg);
  const auto nr = normalizers(panel, cfg, donors, options);
  const auto fit = solve(panel, cfg, donors, options, nr.norm);
  const auto full = estimate_effects(panel, cfg, fit);
  return jackknife(panel, cfg, options, full, threads)[static_cast<std::size_t>(k)];
}

}  // namespace ppscm
