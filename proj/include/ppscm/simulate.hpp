#pragma once

// Calibrated data generating processes under the sharp null, logistic
// selection into treatment on a fixed adoption schedule, and a Monte Carlo
// runner with the usual error metrics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "ppscm/effects.hpp"
#include "ppscm/error.hpp"
#include "ppscm/inference.hpp"
#include "ppscm/panel.hpp"
#include "ppscm/parallel.hpp"
#include "ppscm/solver.hpp"
#include "ppscm/tuning.hpp"

namespace ppscm {

enum class DgpKind { Twfe, Factor, Ar };

[[nodiscard]] inline std::string to_string(DgpKind k) {
  switch (k) {
    case DgpKind::Twfe: return "twfe";
    case DgpKind::Factor: return "factor";
    case DgpKind::Ar: return "ar";
  }
  return "unknown";
}

inline DgpKind parse_dgp_kind(const std::string& s) {
  if (s == "twfe") return DgpKind::Twfe;
  if (s == "factor") return DgpKind::Factor;
  if (s == "ar") return DgpKind::Ar;
  fail(ErrorKind::InvalidConfig, "unknown dgp '" + s + "' (expected twfe, factor or ar)");
}

struct DgpSpec {
  DgpKind kind = DgpKind::Twfe;
  int N = 49;
  int T = 39;
  long first_time = 1959;
  double intercept = 0.0;
  /// Covariance of the unit effect (twfe, 1 x 1) or of (unit effect,
  /// loading 1, loading 2) for the factor model (3 x 3).
  Eigen::MatrixXd unit_cov;
  Eigen::VectorXd time_effects;    // T
  Eigen::MatrixXd factor_values;   // T x 2
  double noise_sd = 0.1;
  Eigen::Vector3d ar_coefs_mean{0.5, 0.2, 0.1};
  double ar_coefs_sd = 0.02;
  double ar_sd_inflation = 8.0;
  int ar_burn_in = 50;
};

inline void validate(const DgpSpec& d) {
  if (d.N < 2 || d.T < 4) fail(ErrorKind::InvalidConfig, "dgp needs N >= 2 and T >= 4");
  if (!(d.noise_sd >= 0)) fail(ErrorKind::InvalidConfig, "noise sd must be nonnegative");
  if (d.kind != DgpKind::Ar) {
    const Eigen::Index p = d.kind == DgpKind::Twfe ? 1 : 3;
    if (d.unit_cov.rows() != p || d.unit_cov.cols() != p)
      fail(ErrorKind::InvalidConfig, "unit covariance has the wrong dimension");
    if (d.time_effects.size() != d.T) fail(ErrorKind::InvalidConfig, "time effects need length T");
  }
  if (d.kind == DgpKind::Factor && (d.factor_values.rows() != d.T || d.factor_values.cols() != 2))
    fail(ErrorKind::InvalidConfig, "factor values must be T x 2");
  if (d.kind == DgpKind::Ar && !(d.ar_coefs_sd >= 0 && d.ar_sd_inflation > 0))
    fail(ErrorKind::InvalidConfig, "invalid autoregressive coefficient spread");
}

namespace detail {

inline Eigen::VectorXd centred_trend(int T, double slope, double wave) {
  Eigen::VectorXd v(T);
  for (int t = 0; t < T; ++t)
    v(t) = slope * (t - (T - 1) / 2.0) + wave * std::sin(2 * std::numbers::pi * t / 13.0);
  return v.array() - v.mean();
}

/// Symmetric square root, valid for semidefinite covariances.
inline Eigen::MatrixXd covariance_root(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Synthetic round-number parameters on a log-outcome scale; not fitted to
/// any dataset.
inline DgpSpec default_dgp(DgpKind kind) {
  DgpSpec d;
  d.kind = kind;
  switch (kind) {
    case DgpKind::Twfe:
      d.unit_cov = Eigen::MatrixXd::Constant(1, 1, 0.25 * 0.25);
      d.time_effects = detail::centred_trend(d.T, 0.02, 0.03);
      d.noise_sd = 0.05;
      break;
    case DgpKind::Factor: {
      d.unit_cov = Eigen::Vector3d(0.25 * 0.25, 0.5 * 0.5, 0.5 * 0.5).asDiagonal();
      d.time_effects = detail::centred_trend(d.T, 0.02, 0.03);
      d.factor_values.resize(d.T, 2);
      for (int t = 0; t < d.T; ++t) {
        d.factor_values(t, 0) = 0.2 * (2.0 * t / (d.T - 1) - 1.0);
        d.factor_values(t, 1) = 0.1 * std::sin(2 * std::numbers::pi * t / (d.T - 1));
      }
      d.noise_sd = 0.05;
      break;
    }
    case DgpKind::Ar:
      d.noise_sd = 0.1;
      break;
  }
  return d;
}

struct GeneratedPanel {
  PanelData panel;                 // untreated outcomes, nobody treated yet
  Eigen::MatrixXd unit_latent;     // N x p: unit effect (and loadings)
  Eigen::MatrixXd ar_coefs;        // T x 3, autoregressive model only
  double noise_sd = 0;
};

inline GeneratedPanel generate(const DgpSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  GeneratedPanel g;
  g.noise_sd = spec.noise_sd;
  auto& p = g.panel;
  p.outcomes.resize(spec.N, spec.T);
  for (int i = 0; i < spec.N; ++i) p.unit_ids.push_back("u" + std::to_string(i + 1));
  for (int t = 0; t < spec.T; ++t) p.times.push_back(spec.first_time + t);
  p.treat_index.assign(static_cast<std::size_t>(spec.N), kNever);

  if (spec.kind == DgpKind::Ar) {
    const double sd = spec.ar_sd_inflation * spec.ar_coefs_sd;
    g.ar_coefs.resize(spec.T, 3);
    for (int t = 0; t < spec.T; ++t)
      for (int l = 0; l < 3; ++l) g.ar_coefs(t, l) = spec.ar_coefs_mean(l) + sd * z(rng);
    g.unit_latent.resize(spec.N, 0);
    for (int i = 0; i < spec.N; ++i) {
      double y1 = 0, y2 = 0, y3 = 0;
      for (int t = -spec.ar_burn_in; t < spec.T; ++t) {
        const Eigen::Vector3d rho =
            t < 0 ? Eigen::Vector3d(spec.ar_coefs_mean) : Eigen::Vector3d(g.ar_coefs.row(t).transpose());
        const double y = rho(0) * y1 + rho(1) * y2 + rho(2) * y3 + spec.noise_sd * z(rng);
        y3 = y2;
        y2 = y1;
        y1 = y;
        if (t >= 0) p.outcomes(i, t) = spec.intercept + y;
      }
    }
    return g;
  }

  const auto root = detail::covariance_root(spec.unit_cov);
  const Eigen::Index dims = spec.unit_cov.rows();
  g.unit_latent.resize(spec.N, dims);
  for (int i = 0; i < spec.N; ++i) {
    Eigen::VectorXd draw(dims);
    for (Eigen::Index c = 0; c < dims; ++c) draw(c) = z(rng);
    g.unit_latent.row(i) = (root * draw).transpose();
  }
  for (int i = 0; i < spec.N; ++i)
    for (int t = 0; t < spec.T; ++t) {
      double y = spec.intercept + g.unit_latent(i, 0) + spec.time_effects(t);
      if (spec.kind == DgpKind::Factor)
        y += g.unit_latent(i, 1) * spec.factor_values(t, 0) + g.unit_latent(i, 2) * spec.factor_values(t, 1);
      p.outcomes(i, t) = y + spec.noise_sd * z(rng);
    }
  return g;
}

enum class SelectionScore { UnitEffect, UnitPlusLoadings, LagSum3 };

struct SelectionSpec {
  double theta0 = -2.7;
  double theta1 = -1.0;
  /// Candidate adoption periods as 0-based time indices, increasing.
  std::vector<int> treatment_time_grid;
  SelectionScore score = SelectionScore::UnitEffect;
};

/// Fourteen adoption years between 1964 and 1987, clustered in the late
/// 1960s, as indices into a panel starting in 1959.
inline std::vector<int> default_treatment_grid() {
  const int years[] = {1964, 1965, 1966, 1967, 1968, 1969, 1970, 1971, 1972, 1974, 1975, 1977, 1984, 1987};
  std::vector<int> g;
  for (int y : years) g.push_back(y - 1959);
  return g;
}

inline SelectionSpec default_selection(DgpKind kind) {
  SelectionSpec s;
  s.treatment_time_grid = default_treatment_grid();
  switch (kind) {
    case DgpKind::Twfe: s.score = SelectionScore::UnitEffect; break;
    case DgpKind::Factor: s.score = SelectionScore::UnitPlusLoadings; break;
    case DgpKind::Ar:
      s.score = SelectionScore::LagSum3;
      s.theta0 = std::log(0.04);
      s.theta1 = -2.0;
      break;
  }
  return s;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Sweeps the adoption grid; at each time every not-yet-treated unit adopts
/// with probability logistic(theta0 + theta1 * score_i).
inline PanelData assign_treatment(const GeneratedPanel& g, const SelectionSpec& sel,
                                  std::uint64_t seed) {
  const auto& grid = sel.treatment_time_grid;
  const int T = static_cast<int>(g.panel.num_times());
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (grid[k] < 1 || grid[k] >= T || (k > 0 && grid[k] <= grid[k - 1]))
      fail(ErrorKind::InvalidConfig, "treatment grid must be increasing within (1, T)");
  if (sel.score == SelectionScore::LagSum3 && !grid.empty() && grid.front() < 3)
    fail(ErrorKind::InvalidConfig, "lag-sum selection needs three periods before the first adoption");
  if (sel.score == SelectionScore::UnitPlusLoadings && g.unit_latent.cols() < 3)
    fail(ErrorKind::InvalidConfig, "loading-based selection needs a factor model panel");
  if (sel.score == SelectionScore::UnitEffect && g.unit_latent.cols() < 1)
    fail(ErrorKind::InvalidConfig, "unit-effect selection needs unit effects");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PanelData out = g.panel;
  const auto N = out.num_units();
  for (int t : grid)
    for (std::size_t i = 0; i < N; ++i) {
      const double draw = u(rng);
      if (!out.never_treated(i)) continue;
      double score = 0;
      const auto ii = static_cast<Eigen::Index>(i);
      switch (sel.score) {
        case SelectionScore::UnitEffect: score = g.unit_latent(ii, 0); break;
        case SelectionScore::UnitPlusLoadings: score = g.unit_latent.row(ii).head(3).sum(); break;
        case SelectionScore::LagSum3: score = g.panel.outcomes.row(ii).segment(t - 3, 3).sum(); break;
      }
      if (draw < logistic(sel.theta0 + sel.theta1 * score)) out.treat_index[i] = t;
    }
  if (out.num_never_treated() == 0) fail(ErrorKind::AllTreated, "every unit was assigned treatment");
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo

enum class EstimatorKind { Did, Scm };

struct EstimatorSpec {
  std::string name;
  EstimatorKind kind = EstimatorKind::Scm;
  /// Unset selects the heuristic nu.
  std::optional<double> nu;
  SolveOptions options;
};

inline EstimatorSpec did_estimator() {
  EstimatorSpec e;
  e.name = "did";
  e.kind = EstimatorKind::Did;
  e.options.intercept = true;
  return e;
}

inline EstimatorSpec scm_estimator(std::string name, std::optional<double> nu, bool intercept) {
  EstimatorSpec e;
  e.name = std::move(name);
  e.nu = nu;
  e.options.intercept = intercept;
  return e;
}

/// DiD plus separate, pooled and heuristic-nu SCM with and without an
/// intercept.
inline std::vector<EstimatorSpec> default_estimators() {
  return {did_estimator(),
          scm_estimator("scm_sep", 0.0, false),
          scm_estimator("scm_pool", 1.0, false),
          scm_estimator("scm_nuhat", std::nullopt, false),
          scm_estimator("scm_int_sep", 0.0, true),
          scm_estimator("scm_int_pool", 1.0, true),
          scm_estimator("scm_int_nuhat", std::nullopt, true)};
}

struct McConfig {
  DgpSpec dgp;
  SelectionSpec selection;
  std::vector<EstimatorSpec> estimators = default_estimators();
  int reps = 200;
  std::uint64_t seed = 1;
  std::optional<int> horizon;
  std::optional<int> lags;
  /// Wild bootstrap draws per fit; 0 disables interval coverage.
  int bootstrap = 0;
  double alpha_level = 0.05;
  /// Coverage is reported for k = 0..coverage_max_k.
  int coverage_max_k = 9;
  /// Theorem-style error bound at k = 0 for the autoregressive model.
  std::optional<double> bound_delta;
  int threads = 1;
};

struct McRecord {
  int rep = 0;
  std::uint64_t seed = 0;
  std::string estimator;
  double nu = 0;
  double att_hat = 0;
  double att_true = 0;
  double mad_unit = 0;   // (1/J) sum_j |tau_j - tau_hat_j|
  double msq_unit = 0;   // (1/J) sum_j (tau_j - tau_hat_j)^2
  int num_treated = 0;
  Eigen::VectorXd att_k;           // k = 0..K
  std::vector<double> ci_lower;    // k = 0..coverage_max_k
  std::vector<double> ci_upper;
  std::vector<bool> covered;
  std::optional<double> abs_error_k0;
  std::optional<double> bound;
  bool converged = true;
};

struct McReport {
  std::string estimator;
  int replications = 0;
  double mad_att = 0, bias_att = 0, rmse_att = 0;
  double mad_unit = 0, rmse_unit = 0;
  /// Monte Carlo standard errors of the corresponding means.
  double se_mad_att = 0, se_bias_att = 0, se_mad_unit = 0;
  std::vector<double> coverage_k;
  double mean_nu = 0;
  double mean_treated = 0;
  std::optional<double> bound_exceed_rate;
  std::optional<double> se_bound_exceed_rate;
  std::uint64_t seed = 0;
};

struct McOutput {
  std::vector<McReport> reports;   // one per estimator, in config order
  std::vector<McRecord> records;   // rep-major, then estimator order
  int draws = 0;                   // panels generated including rejections
  int rejected = 0;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double se_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace detail

/// Aggregates per-replicate records of one estimator.
inline McReport aggregate(const std::string& estimator, const std::vector<McRecord>& records,
                          std::uint64_t seed = 0) {
  McReport r;
  r.estimator = estimator;
  r.seed = seed;
  std::vector<double> abs_err, err, sq_err, mad_unit, msq_unit, nus, treated, exceed;
  std::vector<std::vector<double>> cover;
  for (const auto& rec : records) {
    if (rec.estimator != estimator) continue;
    const double e = rec.att_hat - rec.att_true;
    err.push_back(e);
    abs_err.push_back(std::abs(e));
    sq_err.push_back(e * e);
    mad_unit.push_back(rec.mad_unit);
    msq_unit.push_back(rec.msq_unit);
    nus.push_back(rec.nu);
    treated.push_back(rec.num_treated);
    if (cover.size() < rec.covered.size()) cover.resize(rec.covered.size());
    for (std::size_t k = 0; k < rec.covered.size(); ++k) cover[k].push_back(rec.covered[k] ? 1.0 : 0.0);
    if (rec.bound && rec.abs_error_k0) exceed.push_back(*rec.abs_error_k0 > *rec.bound ? 1.0 : 0.0);
  }
  r.replications = static_cast<int>(err.size());
  r.mad_att = detail::mean_of(abs_err);
  r.bias_att = detail::mean_of(err);
  r.rmse_att = std::sqrt(detail::mean_of(sq_err));
  r.mad_unit = detail::mean_of(mad_unit);
  r.rmse_unit = std::sqrt(detail::mean_of(msq_unit));
  r.se_mad_att = detail::se_of(abs_err);
  r.se_bias_att = detail::se_of(err);
  r.se_mad_unit = detail::se_of(mad_unit);
  for (const auto& c : cover) r.coverage_k.push_back(detail::mean_of(c));
  r.mean_nu = detail::mean_of(nus);
  r.mean_treated = detail::mean_of(treated);
  if (!exceed.empty()) {
    r.bound_exceed_rate = detail::mean_of(exceed);
    r.se_bound_exceed_rate = detail::se_of(exceed);
  }
  return r;
}

/// Mean and standard error of the paired per-replicate difference
/// metric(a) - metric(b), metric being "abs_att" or "mad_unit".
inline std::pair<double, double> paired_difference(const std::vector<McRecord>& records,
                                                   const std::string& a, const std::string& b,
                                                   const std::string& metric) {
  std::map<int, double> va, vb;
  for (const auto& r : records) {
    double v = 0;
    if (metric == "abs_att") v = std::abs(r.att_hat - r.att_true);
    else if (metric == "mad_unit") v = r.mad_unit;
    else fail(ErrorKind::InvalidConfig, "unknown metric " + metric);
    if (r.estimator == a) va[r.rep] = v;
    if (r.estimator == b) vb[r.rep] = v;
  }
  std::vector<double> diff;
  for (const auto& [rep, v] : va)
    if (auto it = vb.find(rep); it != vb.end()) diff.push_back(v - it->second);
  return {detail::mean_of(diff), detail::se_of(diff)};
}

namespace detail {

struct ReplicateDraw {
  GeneratedPanel generated;
  PanelData panel;
  EventConfig cfg;
  DonorSets donors;
  std::uint64_t seed = 0;
};

inline std::optional<ReplicateDraw> draw_replicate(const McConfig& mc, std::uint64_t seed) {
  ReplicateDraw d;
  d.seed = seed;
  d.generated = generate(mc.dgp, derive_seed(seed, 0));
  try {
    d.panel = assign_treatment(d.generated, mc.selection, derive_seed(seed, 1));
    if (d.panel.treated_units().empty()) return std::nullopt;
    d.cfg = make_event_config(d.panel, mc.horizon, mc.lags);
    d.donors = donor_sets(d.panel, d.cfg);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::AllTreated || e.kind() == ErrorKind::NoDonors) return std::nullopt;
    throw;
  }
  return d;
}

inline std::vector<McRecord> run_estimators(const McConfig& mc, const ReplicateDraw& d, int rep) {
  std::vector<McRecord> out;
  std::map<std::tuple<bool, double, double, bool>, NormalizerResult> norm_cache;
  const auto K = d.cfg.horizon;
  const int cover_k = std::min(mc.coverage_max_k, K);
  for (const auto& est : mc.estimators) {
    McRecord rec;
    rec.rep = rep;
    rec.seed = d.seed;
    rec.estimator = est.name;
    rec.num_treated = static_cast<int>(d.cfg.num_treated());
    FitResult fit;
    if (est.kind == EstimatorKind::Did) {
      fit = uniform_fit(d.panel, d.cfg, d.donors, est.options.intercept);
      rec.nu = 0;
    } else {
      const auto key = std::make_tuple(est.options.intercept, est.options.lambda, est.options.xi,
                                       est.options.cohort_mode);
      auto it = norm_cache.find(key);
      if (it == norm_cache.end())
        it = norm_cache.emplace(key, normalizers(d.panel, d.cfg, d.donors, est.options)).first;
      SolveOptions o = est.options;
      o.nu = est.nu.value_or(nu_heuristic(d.cfg, it->second.separate_fit));
      fit = solve(d.panel, d.cfg, d.donors, o, it->second.norm);
      rec.nu = o.nu;
      rec.converged = fit.converged;
    }
    const auto e = estimate_effects(d.panel, d.cfg, fit);
    rec.att_hat = e.att;
    rec.att_k = e.att_k.tail(K + 1);
    for (Eigen::Index j = 0; j < e.per_unit_post_avg.size(); ++j) {
      rec.mad_unit += std::abs(e.per_unit_post_avg(j));
      rec.msq_unit += e.per_unit_post_avg(j) * e.per_unit_post_avg(j);
    }
    rec.mad_unit /= static_cast<double>(rec.num_treated);
    rec.msq_unit /= static_cast<double>(rec.num_treated);
    if (mc.bootstrap > 0) {
      std::vector<int> ks;
      for (int k = 0; k <= cover_k; ++k) ks.push_back(k);
      const auto ci = wild_bootstrap(d.panel, d.cfg, fit, ks, mc.bootstrap, mc.alpha_level,
                                     derive_seed(d.seed, 2));
      for (const auto& c : ci) {
        rec.ci_lower.push_back(c.ci_lower);
        rec.ci_upper.push_back(c.ci_upper);
        rec.covered.push_back(c.ci_lower <= 0.0 && 0.0 <= c.ci_upper);
      }
    }
    if (mc.bound_delta && mc.dgp.kind == DgpKind::Ar && d.cfg.uniform_lags()) {
      BoundInputs in;
      const auto J = d.cfg.num_treated();
      const int L = d.cfg.lags.front();
      Eigen::MatrixXd rho(static_cast<Eigen::Index>(J), L);
      rho.setZero();
      for (std::size_t j = 0; j < J; ++j)
        for (int l = 0; l < std::min(L, 3); ++l)
          rho(static_cast<Eigen::Index>(j), l) = d.generated.ar_coefs(d.panel.treat_index[d.cfg.treated[j]], l);
      in.rho_bar = rho.colwise().mean().transpose();
      in.s = std::sqrt((rho.rowwise() - in.rho_bar.transpose()).squaredNorm() / static_cast<double>(J));
      in.sigma = d.generated.noise_sd;
      in.delta = *mc.bound_delta;
      rec.bound = bound_ar(in, L, J, fit);
      rec.abs_error_k0 = std::abs(e.att_at(0));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace detail

/// Replicate r draws from its own seed stream; a draw without treated
/// units or donors is redrawn, at most ten times per replicate.
inline McOutput run_monte_carlo(const McConfig& mc) {
  if (mc.reps < 1) fail(ErrorKind::InvalidConfig, "reps must be positive");
  if (mc.estimators.empty()) fail(ErrorKind::InvalidConfig, "no estimators configured");
  validate(mc.dgp);
  struct Slot {
    std::vector<McRecord> records;
    int draws = 0;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(mc.reps));
  parallel_for(slots.size(), mc.threads, [&](std::size_t r) {
    const auto stream = derive_seed(mc.seed, r);
    for (int attempt = 0; attempt < 10; ++attempt) {
      ++slots[r].draws;
      auto d = detail::draw_replicate(mc, derive_seed(stream, static_cast<std::uint64_t>(attempt)));
      if (!d) continue;
      slots[r].records = detail::run_estimators(mc, *d, static_cast<int>(r));
      return;
    }
    fail(ErrorKind::InsufficientData,
         "replicate " + std::to_string(r) + " found no usable draw in 10 attempts");
  });
  McOutput out;
  for (auto& s : slots) {
    out.draws += s.draws;
    out.rejected += s.draws - 1;
    for (auto& rec : s.records) out.records.push_back(std::move(rec));
  }
  for (const auto& est : mc.estimators) out.reports.push_back(aggregate(est.name, out.records, mc.seed));
  return out;
}

// ---------------------------------------------------------------------------
// Calibration from an observed panel

namespace detail {

inline Eigen::MatrixXd never_treated_block(const PanelData& panel) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < panel.num_units(); ++i)
    if (panel.never_treated(i)) keep.push_back(i);
  Eigen::MatrixXd y(static_cast<Eigen::Index>(keep.size()), panel.outcomes.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) y.row(static_cast<Eigen::Index>(r)) = panel.outcomes.row(static_cast<Eigen::Index>(keep[r]));
  return y;
}

inline double sample_variance(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace detail

/// Fits the chosen model to the never-treated units and returns a spec with
/// the panel's dimensions.
inline DgpSpec calibrate(const PanelData& panel, DgpKind kind) {
  const Eigen::MatrixXd y = detail::never_treated_block(panel);
  const auto n = y.rows();
  const auto T = y.cols();
  DgpSpec d = default_dgp(kind);
  d.N = static_cast<int>(panel.num_units());
  d.T = static_cast<int>(T);
  d.first_time = panel.times.empty() ? 0 : panel.times.front();

  if (kind == DgpKind::Ar) {
    if (T - 3 < 4 || n < 1) fail(ErrorKind::InsufficientData, "too few never-treated cells for AR(3)");
    Eigen::MatrixXd coefs(n, 3);
    Eigen::VectorXd sampling(n);
    double rss = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::MatrixXd X(T - 3, 3);
      Eigen::VectorXd target(T - 3);
      for (Eigen::Index t = 3; t < T; ++t) {
        target(t - 3) = y(i, t);
        for (int l = 0; l < 3; ++l) X(t - 3, l) = y(i, t - 1 - l);
      }
      const Eigen::MatrixXd xtx = X.transpose() * X;
      const auto ldlt = xtx.ldlt();
      const Eigen::Vector3d b = ldlt.solve(X.transpose() * target);
      coefs.row(i) = b.transpose();
      const double r = (target - X * b).squaredNorm();
      rss += r;
      const double s2 = r / static_cast<double>(T - 3 - 3);
      const Eigen::Matrix3d inv = ldlt.solve(Eigen::Matrix3d::Identity());
      sampling(i) = s2 * inv.trace() / 3.0;
    }
    d.ar_coefs_mean = coefs.colwise().mean().transpose();
    double disp = 0;
    for (int l = 0; l < 3; ++l) disp += detail::sample_variance(coefs.col(l));
    disp /= 3.0;
    d.ar_coefs_sd = std::sqrt(std::max(0.0, disp - sampling.mean()));
    d.noise_sd = std::sqrt(rss / static_cast<double>(n * (T - 6)));
    d.intercept = 0;
    return d;
  }

  const Eigen::Index params = 1 + (n - 1) + (T - 1) + (kind == DgpKind::Factor ? 2 * (n + T) : 0);
  if (n < 2 || n * T <= params)
    fail(ErrorKind::InsufficientData, "too few never-treated cells to calibrate the model");
  const double grand = y.mean();
  const Eigen::VectorXd unit = y.rowwise().mean().array() - grand;
  const Eigen::VectorXd time = y.colwise().mean().transpose().array() - grand;
  Eigen::MatrixXd resid = y;
  resid.array() -= grand;
  resid.colwise() -= unit;
  resid.rowwise() -= time.transpose();
  d.intercept = grand;
  d.time_effects = time;

  if (kind == DgpKind::Twfe) {
    d.unit_cov = Eigen::MatrixXd::Constant(1, 1, detail::sample_variance(unit));
    d.noise_sd = std::sqrt(resid.squaredNorm() / static_cast<double>((n - 1) * (T - 1)));
    return d;
  }

  // The best rank-2 approximation of the two-way residuals.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(resid, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double sn = std::sqrt(static_cast<double>(n));
  Eigen::MatrixXd loadings = svd.matrixU().leftCols(2) * sn;
  d.factor_values = svd.matrixV().leftCols(2) * svd.singularValues().head(2).asDiagonal() / sn;
  const Eigen::MatrixXd remainder = resid - loadings * d.factor_values.transpose();
  d.noise_sd = std::sqrt(remainder.squaredNorm() / static_cast<double>(n * T - params));
  Eigen::MatrixXd latent(n, 3);
  latent.col(0) = unit;
  latent.rightCols(2) = loadings;
  const Eigen::MatrixXd centred = latent.rowwise() - latent.colwise().mean();
  d.unit_cov = centred.transpose() * centred / static_cast<double>(n - 1);
  return d;
}

}  // namespace ppscm
