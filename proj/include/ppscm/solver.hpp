#pragma once

// Partially pooled synthetic control weights: accelerated projected
// gradient over the product of donor simplices, finished by an active-set
// refinement that certifies the KKT conditions.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "ppscm/balance.hpp"
#include "ppscm/error.hpp"
#include "ppscm/panel.hpp"
#include "ppscm/problem.hpp"
#include "ppscm/simplex.hpp"

namespace ppscm {

struct FitResult {
  /// Solved weights, one column per design column: treated units, or
  /// cohorts (column sum n_g) in cohort mode.
  WeightMatrix weights;
  /// Per-unit weights (N x J); equal to `weights` outside cohort mode.
  WeightMatrix unit_weights;
  std::vector<std::vector<std::size_t>> column_members;
  std::optional<Intercepts> intercepts;
  BalanceReport balance;
  DesignMeasures design_fit;
  SolveOptions options;
  Normalization normalization;
  double objective = 0;
  int iterations = 0;
  bool converged = false;
  bool polished = false;
  double frobenius_norm = 0;
  std::vector<double> trace;
};

struct NormalizerResult {
  Normalization norm;
  FitResult separate_fit;
  double scale = 1.0;
};

namespace detail {

struct SolverState {
  ColumnVectors x;
  double value = 0;
  int iterations = 0;
  bool converged = false;
  bool polished = false;
  std::vector<double> trace;
};

inline ColumnVectors project_columns(const QuadraticDesign& d, ColumnVectors v) {
  for (std::size_t c = 0; c < d.num_columns(); ++c)
    v[c] = project_simplex(v[c], d.columns[c].total);
  return v;
}

/// Largest Hessian eigenvalue by power iteration on H v = grad(v) - grad(0).
inline double lipschitz_estimate(const QuadraticDesign& d) {
  ColumnVectors v(d.num_columns()), zero(d.num_columns()), g0, gv;
  for (std::size_t c = 0; c < d.num_columns(); ++c) {
    const auto n = static_cast<Eigen::Index>(d.columns[c].donors.size());
    v[c] = Eigen::VectorXd::Ones(n) + Eigen::VectorXd::LinSpaced(n, 0.0, 0.5);
    zero[c] = Eigen::VectorXd::Zero(n);
  }
  objective_and_gradient(d, zero, g0);
  double norm = std::sqrt(squared_norm(v));
  double eig = 0;
  for (int it = 0; it < 60; ++it) {
    for (auto& vc : v) vc /= norm;
    objective_and_gradient(d, v, gv);
    for (std::size_t c = 0; c < d.num_columns(); ++c) gv[c] -= g0[c];
    norm = std::sqrt(squared_norm(gv));
    if (!(norm > 0)) break;
    const double prev = eig;
    eig = norm;
    v = gv;
    if (it > 5 && std::abs(eig - prev) <= 1e-6 * eig) break;
  }
  return std::max(eig, 2.0 * d.ridge) * 1.02 + std::numeric_limits<double>::min();
}

/// Monotone FISTA with adaptive restart, stopping once the relative
/// objective decrease drops below `tol` on an accepted step.
inline void gradient_phase(const QuadraticDesign& d, SolverState& s, double tol, int budget,
                           double lipschitz, bool record_trace) {
  ColumnVectors y = s.x, z(d.num_columns()), grad;
  double t = 1.0;
  double step_l = lipschitz;
  for (int k = 0; k < budget; ++k) {
    objective_and_gradient(d, y, grad);
    const double fy = objective(d, y);
    for (;;) {  // backtracking against the quadratic upper bound
      for (std::size_t c = 0; c < d.num_columns(); ++c) z[c] = y[c] - grad[c] / step_l;
      z = project_columns(d, std::move(z));
      double lin = 0, dist = 0;
      for (std::size_t c = 0; c < d.num_columns(); ++c) {
        const Eigen::VectorXd diff = z[c] - y[c];
        lin += grad[c].dot(diff);
        dist += diff.squaredNorm();
      }
      const double fz = objective(d, z);
      if (fz <= fy + lin + 0.5 * step_l * dist + 1e-14 * std::abs(fy) || step_l > 1e30) break;
      step_l *= 2.0;
    }
    const double fz = objective(d, z);
    ++s.iterations;
    const double previous = s.value;
    ColumnVectors x_prev = s.x;
    const bool accepted = fz <= s.value;
    if (accepted) {
      s.x = z;
      s.value = fz;
    }
    if (record_trace) s.trace.push_back(s.value);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (!accepted) {
      y = s.x;  // restart momentum
      t = 1.0;
      continue;
    }
    for (std::size_t c = 0; c < d.num_columns(); ++c)
      y[c] = s.x[c] + ((t - 1.0) / t_next) * (s.x[c] - x_prev[c]);
    t = t_next;
    const double decrease = previous - s.value;
    if (decrease >= 0 && decrease <= tol * std::max(std::abs(previous), 1e-300) && k > 0) {
      s.converged = true;
      return;
    }
  }
}

/// Solves H_FF X = B on a free index set F. The Hessian is block diagonal
/// over columns plus a low-rank pooled term, which the Woodbury identity
/// exploits; the dense factorisation is the fallback.
class ReducedSolver {
 public:
  ReducedSolver(const QuadraticDesign& d, const FlatQuadratic& q) : q_(q) {
    const auto G = d.num_columns();
    const auto n = static_cast<Eigen::Index>(d.num_variables());
    blocks_.resize(G);
    column_of_.resize(static_cast<std::size_t>(n));
    for (std::size_t c = 0; c < G; ++c) {
      const auto& col = d.columns[c];
      const Eigen::MatrixXd weighted = col.sep_base.asDiagonal() * col.donor_rows;
      blocks_[c] = 2.0 * d.a_sep * (col.donor_rows.transpose() * weighted);
      blocks_[c].diagonal().array() += 2.0 * d.ridge;
      for (auto k = q.offset[c]; k < q.offset[c + 1]; ++k) column_of_[k] = c;
    }
    low_rank_ = Eigen::MatrixXd::Zero(n, d.pooled_base.size());
    if (d.a_pool > 0) {
      const double G_div = d.divisor();
      for (std::size_t c = 0; c < G; ++c) {
        const auto& col = d.columns[c];
        for (Eigen::Index row = 0; row < col.donor_rows.rows(); ++row) {
          const int p = col.pooled_row[static_cast<std::size_t>(row)];
          const double scale = std::sqrt(2.0 * d.a_pool * d.pooled_base(p)) / G_div;
          low_rank_.block(static_cast<Eigen::Index>(q.offset[c]), p,
                          static_cast<Eigen::Index>(col.donors.size()), 1) +=
              scale * col.donor_rows.row(row).transpose();
        }
      }
    }
  }

  [[nodiscard]] std::optional<Eigen::MatrixXd> solve(const std::vector<std::size_t>& idx,
                                                     const Eigen::MatrixXd& rhs) const {
    if (auto x = woodbury(idx, rhs)) {
      // Iterative refinement against the exact reduced Hessian, judged by
      // the backward error.
      const double h_norm = norm_bound(idx);
      for (int pass = 0; pass < 6; ++pass) {
        const Eigen::MatrixXd residual = rhs - apply(idx, *x);
        const double floor = 1e-13 * (h_norm * x->cwiseAbs().maxCoeff() + rhs.cwiseAbs().maxCoeff());
        if (residual.cwiseAbs().maxCoeff() <= floor) return x;
        const auto correction = woodbury(idx, residual);
        if (!correction) break;
        *x += *correction;
      }
    }
    const auto m = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd h(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b)
        h(a, b) = q_.hessian(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(a)]),
                             static_cast<Eigen::Index>(idx[static_cast<std::size_t>(b)]));
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success) return std::nullopt;
    return Eigen::MatrixXd(llt.solve(rhs));
  }

 private:
  /// Runs of consecutive free indices belonging to the same column.
  template <class Fn>
  void for_each_block(const std::vector<std::size_t>& idx, Fn&& fn) const {
    std::size_t start = 0;
    while (start < idx.size()) {
      const auto c = column_of_[idx[start]];
      std::size_t end = start;
      while (end < idx.size() && column_of_[idx[end]] == c) ++end;
      const auto w = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd block(w, w);
      for (Eigen::Index a = 0; a < w; ++a)
        for (Eigen::Index b = 0; b < w; ++b)
          block(a, b) = blocks_[c](static_cast<Eigen::Index>(idx[start + a] - q_.offset[c]),
                                   static_cast<Eigen::Index>(idx[start + b] - q_.offset[c]));
      fn(static_cast<Eigen::Index>(start), block);
      start = end;
    }
  }

  [[nodiscard]] Eigen::MatrixXd gather_low_rank(const std::vector<std::size_t>& idx) const {
    Eigen::MatrixXd u(static_cast<Eigen::Index>(idx.size()), low_rank_.cols());
    for (std::size_t a = 0; a < idx.size(); ++a)
      u.row(static_cast<Eigen::Index>(a)) = low_rank_.row(static_cast<Eigen::Index>(idx[a]));
    return u;
  }

  [[nodiscard]] Eigen::MatrixXd apply(const std::vector<std::size_t>& idx, const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd u = gather_low_rank(idx);
    Eigen::MatrixXd out = u * (u.transpose() * x);
    for_each_block(idx, [&](Eigen::Index s0, const Eigen::MatrixXd& block) {
      out.middleRows(s0, block.rows()) += block * x.middleRows(s0, block.rows());
    });
    return out;
  }

  [[nodiscard]] double norm_bound(const std::vector<std::size_t>& idx) const {
    double best = 0;
    for_each_block(idx, [&](Eigen::Index, const Eigen::MatrixXd& block) {
      best = std::max(best, block.cwiseAbs().rowwise().sum().maxCoeff());
    });
    const Eigen::MatrixXd u = gather_low_rank(idx);
    return best + (u.rows() > 0 ? u.rowwise().norm().maxCoeff() * u.colwise().norm().sum() : 0.0);
  }

  [[nodiscard]] std::optional<Eigen::MatrixXd> woodbury(const std::vector<std::size_t>& idx,
                                                        const Eigen::MatrixXd& rhs) const {
    const auto m = static_cast<Eigen::Index>(idx.size());
    const auto r = low_rank_.cols();
    const Eigen::MatrixXd u = gather_low_rank(idx);
    Eigen::MatrixXd y(m, rhs.cols()), z(m, r);
    bool ok = true;
    for_each_block(idx, [&](Eigen::Index s0, const Eigen::MatrixXd& block) {
      if (!ok) return;
      Eigen::LLT<Eigen::MatrixXd> llt(block);
      if (llt.info() != Eigen::Success) {
        ok = false;
        return;
      }
      y.middleRows(s0, block.rows()) = llt.solve(rhs.middleRows(s0, block.rows()));
      z.middleRows(s0, block.rows()) = llt.solve(u.middleRows(s0, block.rows()));
    });
    if (!ok) return std::nullopt;
    if (r == 0) return y;
    Eigen::MatrixXd inner = u.transpose() * z;
    inner.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> small(inner);
    if (small.info() != Eigen::Success) return std::nullopt;
    return Eigen::MatrixXd(y - z * small.solve(u.transpose() * y));
  }

  const FlatQuadratic& q_;
  std::vector<Eigen::MatrixXd> blocks_;
  std::vector<std::size_t> column_of_;
  Eigen::MatrixXd low_rank_;
};

/// Primal active-set refinement started from a feasible point, in step
/// form: gradients come from the residuals, never from H x + c, so the
/// multipliers stay accurate when the objective is nearly flat. Returns true
/// when the KKT conditions hold at the returned point.
inline bool active_set_phase(const QuadraticDesign& d, SolverState& s, int max_steps,
                             bool record_trace) {
  const auto n = d.num_variables();
  if (n == 0) return true;
  const FlatQuadratic q = flatten(d);
  const ReducedSolver reduced(d, q);
  const auto G = d.num_columns();
  std::vector<std::size_t> column_of(n);
  for (std::size_t c = 0; c < G; ++c)
    for (auto k = q.offset[c]; k < q.offset[c + 1]; ++k) column_of[k] = c;

  auto to_flat = [&](const ColumnVectors& cv) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (std::size_t c = 0; c < G; ++c)
      v.segment(static_cast<Eigen::Index>(q.offset[c]), cv[c].size()) = cv[c];
    return v;
  };
  auto to_columns = [&](const Eigen::VectorXd& v) {
    ColumnVectors cv(G);
    for (std::size_t c = 0; c < G; ++c)
      cv[c] = v.segment(static_cast<Eigen::Index>(q.offset[c]),
                        static_cast<Eigen::Index>(q.offset[c + 1] - q.offset[c]));
    return cv;
  };
  auto gradient = [&](const Eigen::VectorXd& v) {
    ColumnVectors g;
    objective_and_gradient(d, to_columns(v), g, true);
    return to_flat(g);
  };

  Eigen::VectorXd x = to_flat(s.x);
  std::vector<bool> free_var(n);
  for (std::size_t k = 0; k < n; ++k) free_var[k] = x(static_cast<Eigen::Index>(k)) > 0;

  bool at_subproblem_optimum = false;
  int refinements = 0;
  Eigen::VectorXd multipliers = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(G));
  for (int step = 0; step < max_steps; ++step) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < n; ++k)
      if (free_var[k]) idx.push_back(k);
    const auto m = static_cast<Eigen::Index>(idx.size());
    const Eigen::VectorXd grad = gradient(x);

    if (!at_subproblem_optimum) {
      // Newton step on the free set keeping every column sum fixed.
      Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(G) + 1);
      for (Eigen::Index a = 0; a < m; ++a) {
        const auto k = idx[static_cast<std::size_t>(a)];
        rhs(a, 0) = -grad(static_cast<Eigen::Index>(k));
        rhs(a, static_cast<Eigen::Index>(column_of[k]) + 1) = 1.0;
      }
      const auto solved = reduced.solve(idx, rhs);
      if (!solved) return false;
      const Eigen::VectorXd base = solved->col(0);
      const Eigen::MatrixXd spread = solved->rightCols(static_cast<Eigen::Index>(G));
      const Eigen::MatrixXd e = rhs.rightCols(static_cast<Eigen::Index>(G));
      const Eigen::MatrixXd schur = e.transpose() * spread;
      const Eigen::VectorXd shift = schur.ldlt().solve(-e.transpose() * base);
      const Eigen::VectorXd delta = base + spread * shift;
      if (!delta.allFinite()) return false;

      double alpha = 1.0;
      std::optional<std::size_t> blocking;
      for (Eigen::Index a = 0; a < m; ++a) {
        const auto k = idx[static_cast<std::size_t>(a)];
        const double cur = x(static_cast<Eigen::Index>(k));
        if (delta(a) < 0 && cur + delta(a) < 0) {
          const double ratio = cur / -delta(a);
          if (ratio < alpha) {
            alpha = ratio;
            blocking = k;
          }
        }
      }
      for (Eigen::Index a = 0; a < m; ++a)
        x(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(a)])) += alpha * delta(a);
      if (blocking) {
        x(static_cast<Eigen::Index>(*blocking)) = 0.0;
        free_var[*blocking] = false;
        refinements = 0;
        continue;
      }
      // Repeat the full step on the same free set to clean up rounding.
      if (++refinements < 3) continue;
      at_subproblem_optimum = true;
      refinements = 0;
      continue;
    }

    // Column multipliers from the free gradients, then the bound multipliers
    // of the variables held at zero.
    multipliers.setZero();
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(G));
    double scale = 0;
    for (auto k : idx) {
      multipliers(static_cast<Eigen::Index>(column_of[k])) += grad(static_cast<Eigen::Index>(k));
      counts(static_cast<Eigen::Index>(column_of[k])) += 1;
    }
    multipliers.array() /= counts.array().max(1.0);
    for (std::size_t k = 0; k < n; ++k) scale = std::max(scale, std::abs(grad(static_cast<Eigen::Index>(k))));
    const double threshold = -1e-9 * std::max(scale, 1e-300);
    std::optional<std::size_t> release;
    double worst = threshold;
    for (std::size_t k = 0; k < n; ++k) {
      if (free_var[k]) continue;
      const double mu = grad(static_cast<Eigen::Index>(k)) -
                        multipliers(static_cast<Eigen::Index>(column_of[k]));
      if (mu < worst) {
        worst = mu;
        release = k;
      }
    }
    if (!release) {
      ColumnVectors out = to_columns(x.cwiseMax(0.0));
      for (std::size_t c = 0; c < G; ++c) out[c] = project_simplex(out[c], d.columns[c].total);
      const double value = objective(d, out);
      if (value <= s.value + 1e-12 * std::max(1.0, std::abs(s.value))) {
        s.x = std::move(out);
        s.value = std::min(value, s.value);
        if (record_trace) s.trace.push_back(s.value);
      }
      return true;
    }
    free_var[*release] = true;
    at_subproblem_optimum = false;
  }
  return false;
}

inline ColumnVectors uniform_start(const QuadraticDesign& d) {
  ColumnVectors x(d.num_columns());
  for (std::size_t c = 0; c < d.num_columns(); ++c) {
    const auto n = static_cast<Eigen::Index>(d.columns[c].donors.size());
    x[c] = Eigen::VectorXd::Constant(n, d.columns[c].total / static_cast<double>(n));
  }
  return x;
}

inline ColumnVectors start_from(const QuadraticDesign& d, const WeightMatrix& init) {
  if (init.num_columns() != static_cast<Eigen::Index>(d.num_columns()) ||
      init.num_units() != static_cast<Eigen::Index>(d.num_units))
    fail(ErrorKind::InvalidConfig, "initial weights have the wrong shape");
  ColumnVectors x(d.num_columns());
  for (std::size_t c = 0; c < d.num_columns(); ++c) {
    const auto& donors = d.columns[c].donors;
    Eigen::VectorXd v(static_cast<Eigen::Index>(donors.size()));
    for (std::size_t k = 0; k < donors.size(); ++k)
      v(static_cast<Eigen::Index>(k)) = init.values(static_cast<Eigen::Index>(donors[k]),
                                                    static_cast<Eigen::Index>(c));
    x[c] = project_simplex(v, d.columns[c].total);
  }
  return x;
}

inline SolverState minimize(const QuadraticDesign& d, ColumnVectors start,
                            const SolveOptions& options) {
  SolverState s;
  s.x = project_columns(d, std::move(start));
  s.value = objective(d, s.x);
  if (options.record_trace) s.trace.push_back(s.value);
  const double lipschitz = lipschitz_estimate(d);
  const int max_steps = 50 + 4 * static_cast<int>(d.num_variables());

  if (options.polish) {
    // Coarse gradient phase to identify the support, then refine exactly.
    const int coarse = std::min(options.max_iter, 2000);
    gradient_phase(d, s, std::max(options.tol, 1e-7), coarse, lipschitz, options.record_trace);
    s.converged = false;
    if (active_set_phase(d, s, max_steps, options.record_trace)) {
      s.polished = s.converged = true;
      return s;
    }
  }
  const int remaining = options.max_iter - s.iterations;
  if (remaining > 0)
    gradient_phase(d, s, options.tol, remaining, lipschitz, options.record_trace);
  if (options.polish && active_set_phase(d, s, max_steps, options.record_trace))
    s.polished = s.converged = true;
  return s;
}

inline WeightMatrix to_weight_matrix(const QuadraticDesign& d, const ColumnVectors& x) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.num_units),
                                            static_cast<Eigen::Index>(d.num_columns()));
  for (std::size_t c = 0; c < d.num_columns(); ++c)
    for (std::size_t k = 0; k < d.columns[c].donors.size(); ++k)
      w(static_cast<Eigen::Index>(d.columns[c].donors[k]), static_cast<Eigen::Index>(c)) =
          x[c](static_cast<Eigen::Index>(k));
  return WeightMatrix(std::move(w));
}

/// Reference scale for the ridge in the unnormalised stage: mean squared
/// within-unit deviation of outcomes before the last adoption.
inline double outcome_scale(const PanelData& panel, const EventConfig& cfg) {
  int last = 0;
  for (auto u : cfg.treated) last = std::max(last, panel.treat_index[u]);
  last = std::max(last, 2);
  last = std::min<int>(last, static_cast<int>(panel.num_times()));
  const Eigen::MatrixXd block = panel.outcomes.leftCols(last);
  const Eigen::MatrixXd centred = block.colwise() - block.rowwise().mean();
  const double s = centred.squaredNorm() / static_cast<double>(centred.size());
  return s > 0 ? s : 1.0;
}

}  // namespace detail

/// alpha_j: mean pre-treatment gap between treated unit j and its
/// synthetic control over the lag window.
inline double intercept_closed_form(const PanelData& panel, const EventConfig& cfg, std::size_t j,
                                    const Eigen::Ref<const Eigen::VectorXd>& gamma_j) {
  const int t0 = panel.treat_index[cfg.treated[j]];
  const int lags = cfg.lags[j];
  const Eigen::VectorXd means = panel.outcomes.middleCols(t0 - lags, lags).rowwise().mean();
  return means(static_cast<Eigen::Index>(cfg.treated[j])) - gamma_j.dot(means);
}

inline Intercepts intercepts_closed_form(const PanelData& panel, const EventConfig& cfg,
                                         const WeightMatrix& unit_weights) {
  Intercepts a(static_cast<Eigen::Index>(cfg.num_treated()));
  for (std::size_t j = 0; j < cfg.num_treated(); ++j)
    a(static_cast<Eigen::Index>(j)) =
        intercept_closed_form(panel, cfg, j, unit_weights.column(static_cast<Eigen::Index>(j)));
  return a;
}

/// Objective re-evaluated through the balance measures, with the intercept
/// inserted explicitly. Not available in cohort mode.
inline double evaluate_objective(const PanelData& panel, const EventConfig& cfg,
                                 const SolveOptions& options, const Normalization& norm,
                                 const WeightMatrix& gamma, const std::optional<Intercepts>& alpha) {
  if (options.cohort_mode)
    fail(ErrorKind::RegimeUnsupported, "objective re-evaluation is unit level only");
  const double qs = q_sep(panel, cfg, gamma, alpha);
  const double qp = q_pool(panel, cfg, gamma, alpha);
  double sep = qs * qs, pool = qp * qp;
  if (options.xi > 0) {
    auto [sx, px] = q_covariates(panel, cfg, gamma);
    sep += options.xi * sx * sx;
    pool += options.xi * px * px;
  }
  return options.nu * pool / (norm.c_pool * norm.c_pool) +
         (1 - options.nu) * sep / (norm.c_sep * norm.c_sep) +
         options.lambda * gamma.values.squaredNorm();
}

namespace detail {

inline FitResult assemble(const PanelData& panel, const EventConfig& cfg,
                          const QuadraticDesign& d, const SolverState& s,
                          const SolveOptions& options, const Normalization& norm) {
  FitResult fit;
  fit.weights = to_weight_matrix(d, s.x);
  Eigen::MatrixXd unit = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(panel.num_units()),
                                               static_cast<Eigen::Index>(cfg.num_treated()));
  for (std::size_t c = 0; c < d.num_columns(); ++c) {
    fit.column_members.push_back(d.columns[c].members);
    for (auto j : d.columns[c].members)
      unit.col(static_cast<Eigen::Index>(j)) =
          fit.weights.column(static_cast<Eigen::Index>(c)) / d.columns[c].total;
  }
  fit.unit_weights = WeightMatrix(std::move(unit));
  if (options.intercept) fit.intercepts = intercepts_closed_form(panel, cfg, fit.unit_weights);
  fit.balance = balance_report(panel, cfg, fit.unit_weights, fit.intercepts, norm, options.xi > 0);
  fit.design_fit = measures(d, s.x);
  fit.options = options;
  fit.normalization = norm;
  fit.objective = s.value;
  fit.iterations = s.iterations;
  fit.converged = s.converged;
  fit.polished = s.polished;
  fit.frobenius_norm = fit.weights.frobenius_norm();
  fit.trace = s.trace;
  return fit;
}

}  // namespace detail

/// Minimises nu (q~pool)^2 + (1 - nu) (q~sep)^2 + lambda |Gamma|_F^2 (plus
/// the xi-weighted covariate terms) for fixed normalisation constants.
inline FitResult solve(const PanelData& panel, const EventConfig& cfg, const DonorSets& donors,
                       const SolveOptions& options, const Normalization& norm,
                       const WeightMatrix* init = nullptr) {
  validate(options);
  DesignScaling scaling;
  scaling.a_sep = (1 - options.nu) / (norm.c_sep * norm.c_sep);
  scaling.a_pool = options.nu / (norm.c_pool * norm.c_pool);
  scaling.ridge = options.lambda;
  const auto d = build_design(panel, cfg, donors, options, scaling);
  auto start = init ? detail::start_from(d, *init) : detail::uniform_start(d);
  const auto state = detail::minimize(d, std::move(start), options);
  return detail::assemble(panel, cfg, d, state, options, norm);
}

/// Separate (nu = 0) fit on the unnormalised scale and the constants
/// C^sep, C^pool it implies. A constant at numerical zero is reset to 1
/// and flagged.
inline NormalizerResult normalizers(const PanelData& panel, const EventConfig& cfg,
                                    const DonorSets& donors, const SolveOptions& options) {
  validate(options);
  NormalizerResult out;
  out.scale = detail::outcome_scale(panel, cfg);
  SolveOptions sep = options;
  sep.nu = 0.0;
  DesignScaling scaling;
  scaling.a_sep = 1.0;
  scaling.a_pool = 0.0;
  scaling.ridge = options.lambda * out.scale;
  const auto d = build_design(panel, cfg, donors, sep, scaling);
  const auto state = detail::minimize(d, detail::uniform_start(d), sep);
  const Normalization unit_norm{};
  out.separate_fit = detail::assemble(panel, cfg, d, state, sep, unit_norm);

  const auto& m = out.separate_fit.design_fit;
  const double floor = 1e-5 * std::sqrt(out.scale);
  const double c_sep = std::sqrt(m.sep_total());
  const double c_pool = std::sqrt(m.pool_total());
  out.norm.sep_degenerate = !(c_sep > floor);
  out.norm.pool_degenerate = !(c_pool > floor);
  out.norm.c_sep = out.norm.sep_degenerate ? 1.0 : c_sep;
  out.norm.c_pool = out.norm.pool_degenerate ? 1.0 : c_pool;
  out.separate_fit.normalization = out.norm;
  out.separate_fit.balance.norm = out.norm;
  out.separate_fit.balance.q_sep_norm = out.separate_fit.balance.q_sep / out.norm.c_sep;
  out.separate_fit.balance.q_pool_norm = out.separate_fit.balance.q_pool / out.norm.c_pool;
  return out;
}

/// Uniform weights over each donor pool (difference-in-differences when
/// combined with an intercept).
inline FitResult uniform_fit(const PanelData& panel, const EventConfig& cfg, const DonorSets& donors,
                             bool intercept) {
  SolveOptions options;
  options.nu = 0.0;
  options.lambda = 0.0;
  options.intercept = intercept;
  const auto d = build_design(panel, cfg, donors, options, DesignScaling{});
  detail::SolverState s;
  s.x = detail::uniform_start(d);
  s.value = objective(d, s.x);
  s.converged = true;
  return detail::assemble(panel, cfg, d, s, options, Normalization{});
}

/// Default covariate weight: sample variance of never-treated outcomes
/// before the last adoption time.
inline double default_xi(const PanelData& panel, const EventConfig& cfg) {
  int last = 0;
  for (auto u : cfg.treated) last = std::max(last, panel.treat_index[u]);
  std::vector<double> values;
  for (std::size_t i = 0; i < panel.num_units(); ++i)
    if (panel.never_treated(i))
      for (int t = 0; t < last; ++t) values.push_back(panel.outcomes(static_cast<Eigen::Index>(i), t));
  if (values.size() < 2) return 0.0;
  const Eigen::Map<const Eigen::VectorXd> v(values.data(), static_cast<Eigen::Index>(values.size()));
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(values.size() - 1);
}

}  // namespace ppscm
