#pragma once

// The partially pooled objective written as a generic quadratic over a
// product of scaled simplices. Each column is one synthetic control (a
// treated unit, or a cohort in cohort mode); each row is one balance
// condition (a lagged outcome or a covariate).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <vector>

#include "ppscm/balance.hpp"
#include "ppscm/error.hpp"
#include "ppscm/panel.hpp"

namespace ppscm {

struct SolveOptions {
  double nu = 0.5;
  double lambda = 1e-6;
  double xi = 0.0;
  bool intercept = false;
  bool cohort_mode = false;
  double tol = 1e-10;
  int max_iter = 10000;
  /// Finish with an active-set refinement on the support found by the
  /// gradient phase.
  bool polish = true;
  bool record_trace = false;
};

inline void validate(const SolveOptions& o) {
  if (!(o.nu >= 0.0 && o.nu <= 1.0)) fail(ErrorKind::InvalidConfig, "nu must lie in [0, 1]");
  if (!(o.lambda >= 0.0)) fail(ErrorKind::InvalidConfig, "lambda must be nonnegative");
  if (!(o.xi >= 0.0)) fail(ErrorKind::InvalidConfig, "xi must be nonnegative");
  if (!(o.tol > 0.0)) fail(ErrorKind::InvalidConfig, "tol must be positive");
  if (o.max_iter < 1) fail(ErrorKind::InvalidConfig, "max_iter must be positive");
}

enum class RowKind { Lag, Covariate };

struct DesignColumn {
  std::vector<std::size_t> members;  // positions in EventConfig::treated
  std::vector<std::size_t> donors;   // panel unit indices
  double total = 1.0;                // required column sum
  int treat_index = 0;
  int lags = 0;
  Eigen::VectorXd target;            // rows
  Eigen::MatrixXd donor_rows;        // rows x donors
  Eigen::VectorXd sep_base;          // per-row weight of the unit-level term
  std::vector<int> pooled_row;       // per-row index into the pooled rows
};

/// f(x) = a_sep * sum_c sum_r sep_base_r e_cr^2
///      + a_pool * sum_p pooled_base_p R_p^2 + ridge * |x|^2
/// with e_c = target_c - donor_rows_c x_c and R_p = (1/G) sum_c e_{c,r(p)}.
struct QuadraticDesign {
  std::vector<DesignColumn> columns;
  Eigen::VectorXd pooled_base;
  std::vector<RowKind> pooled_kind;
  double a_sep = 1.0;
  double a_pool = 0.0;
  double ridge = 0.0;
  std::size_t num_units = 0;
  int max_lag = 0;

  [[nodiscard]] std::size_t num_columns() const { return columns.size(); }
  [[nodiscard]] double divisor() const { return static_cast<double>(columns.size()); }
  [[nodiscard]] std::size_t num_variables() const {
    std::size_t n = 0;
    for (const auto& c : columns) n += c.donors.size();
    return n;
  }
};

using ColumnVectors = std::vector<Eigen::VectorXd>;

struct DesignResiduals {
  ColumnVectors column;     // e_c
  Eigen::VectorXd pooled;   // R
};

/// Squared imbalance pieces of a design at a point, before the a_sep/a_pool
/// scalarisation. Outcome and covariate rows are kept apart.
struct DesignMeasures {
  double sep_outcome = 0;   // q_sep^2
  double sep_covariate = 0; // xi * q_sep_X^2
  double pool_outcome = 0;  // q_pool^2
  double pool_covariate = 0;
  Eigen::VectorXd column_q; // q_c per column (outcome rows only)
  double pooled_q = 0;      // q_pool (outcome rows only)

  [[nodiscard]] double sep_total() const { return sep_outcome + sep_covariate; }
  [[nodiscard]] double pool_total() const { return pool_outcome + pool_covariate; }
};

/// With `extended` the sums are accumulated in long double, which matters
/// when the residuals are tiny next to the targets.
inline DesignResiduals residuals(const QuadraticDesign& d, const ColumnVectors& x, bool extended = false) {
  DesignResiduals r;
  r.column.resize(d.num_columns());
  r.pooled = Eigen::VectorXd::Zero(d.pooled_base.size());
  if (!extended) {
    for (std::size_t c = 0; c < d.num_columns(); ++c) {
      const auto& col = d.columns[c];
      r.column[c] = col.target - col.donor_rows * x[c];
      for (Eigen::Index row = 0; row < r.column[c].size(); ++row)
        r.pooled(col.pooled_row[static_cast<std::size_t>(row)]) += r.column[c](row);
    }
    r.pooled /= d.divisor();
    return r;
  }
  std::vector<long double> pooled(static_cast<std::size_t>(d.pooled_base.size()), 0.0L);
  for (std::size_t c = 0; c < d.num_columns(); ++c) {
    const auto& col = d.columns[c];
    r.column[c].resize(col.target.size());
    for (Eigen::Index row = 0; row < col.target.size(); ++row) {
      long double e = col.target(row);
      for (Eigen::Index k = 0; k < x[c].size(); ++k)
        e -= static_cast<long double>(col.donor_rows(row, k)) * x[c](k);
      r.column[c](row) = static_cast<double>(e);
      pooled[col.pooled_row[static_cast<std::size_t>(row)]] += e;
    }
  }
  for (std::size_t p = 0; p < pooled.size(); ++p)
    r.pooled(static_cast<Eigen::Index>(p)) = static_cast<double>(pooled[p] / d.divisor());
  return r;
}

inline DesignMeasures measures(const QuadraticDesign& d, const ColumnVectors& x) {
  const auto r = residuals(d, x);
  DesignMeasures m;
  m.column_q.resize(static_cast<Eigen::Index>(d.num_columns()));
  for (std::size_t c = 0; c < d.num_columns(); ++c) {
    const auto& col = d.columns[c];
    const double lag_sq = r.column[c].head(col.lags).squaredNorm();
    m.column_q(static_cast<Eigen::Index>(c)) = std::sqrt(lag_sq / col.lags);
    const auto& e = r.column[c];
    for (Eigen::Index row = 0; row < e.size(); ++row) {
      const double v = col.sep_base(row) * e(row) * e(row);
      (row < col.lags ? m.sep_outcome : m.sep_covariate) += v;
    }
  }
  for (Eigen::Index p = 0; p < r.pooled.size(); ++p) {
    const double v = d.pooled_base(p) * r.pooled(p) * r.pooled(p);
    (d.pooled_kind[static_cast<std::size_t>(p)] == RowKind::Lag ? m.pool_outcome : m.pool_covariate) += v;
  }
  m.pooled_q = std::sqrt(m.pool_outcome);
  return m;
}

inline double squared_norm(const ColumnVectors& x) {
  double s = 0;
  for (const auto& v : x) s += v.squaredNorm();
  return s;
}

inline double objective(const QuadraticDesign& d, const ColumnVectors& x) {
  const auto r = residuals(d, x);
  double sep = 0;
  for (std::size_t c = 0; c < d.num_columns(); ++c)
    sep += (d.columns[c].sep_base.array() * r.column[c].array().square()).sum();
  const double pool = (d.pooled_base.array() * r.pooled.array().square()).sum();
  return d.a_sep * sep + d.a_pool * pool + d.ridge * squared_norm(x);
}

/// Objective and gradient in one pass.
inline double objective_and_gradient(const QuadraticDesign& d, const ColumnVectors& x,
                                     ColumnVectors& grad, bool extended = false) {
  const auto r = residuals(d, x, extended);
  const double G = d.divisor();
  const Eigen::VectorXd pooled_slope =
      (d.a_pool / G) * (d.pooled_base.array() * r.pooled.array()).matrix();
  grad.resize(d.num_columns());
  double sep = 0;
  for (std::size_t c = 0; c < d.num_columns(); ++c) {
    const auto& col = d.columns[c];
    const auto& e = r.column[c];
    Eigen::VectorXd slope = d.a_sep * (col.sep_base.array() * e.array()).matrix();
    for (Eigen::Index row = 0; row < e.size(); ++row)
      slope(row) += pooled_slope(col.pooled_row[static_cast<std::size_t>(row)]);
    grad[c] = -2.0 * (col.donor_rows.transpose() * slope) + 2.0 * d.ridge * x[c];
    sep += (col.sep_base.array() * e.array().square()).sum();
  }
  const double pool = (d.pooled_base.array() * r.pooled.array().square()).sum();
  return d.a_sep * sep + d.a_pool * pool + d.ridge * squared_norm(x);
}

/// Flattened Hessian H and linear term c with f(x) = x'Hx/2 + c'x + const.
struct FlatQuadratic {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear;
  std::vector<std::size_t> offset;  // start of each column in the flat vector
};

inline FlatQuadratic flatten(const QuadraticDesign& d) {
  FlatQuadratic q;
  const auto n = d.num_variables();
  q.offset.resize(d.num_columns() + 1, 0);
  for (std::size_t c = 0; c < d.num_columns(); ++c)
    q.offset[c + 1] = q.offset[c] + d.columns[c].donors.size();
  q.hessian = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const double G = d.divisor();
  Eigen::MatrixXd pooled_map = Eigen::MatrixXd::Zero(d.pooled_base.size(), static_cast<Eigen::Index>(n));
  for (std::size_t c = 0; c < d.num_columns(); ++c) {
    const auto& col = d.columns[c];
    const auto off = static_cast<Eigen::Index>(q.offset[c]);
    const auto width = static_cast<Eigen::Index>(col.donors.size());
    const Eigen::MatrixXd weighted = col.sep_base.asDiagonal() * col.donor_rows;
    q.hessian.block(off, off, width, width) += 2.0 * d.a_sep * (col.donor_rows.transpose() * weighted);
    for (Eigen::Index row = 0; row < col.donor_rows.rows(); ++row)
      pooled_map.block(col.pooled_row[static_cast<std::size_t>(row)], off, 1, width) +=
          col.donor_rows.row(row) / G;
  }
  if (d.a_pool > 0)
    q.hessian.noalias() += 2.0 * d.a_pool *
                           (pooled_map.transpose() * d.pooled_base.asDiagonal() * pooled_map);
  q.hessian.diagonal().array() += 2.0 * d.ridge;

  ColumnVectors zero(d.num_columns()), grad;
  for (std::size_t c = 0; c < d.num_columns(); ++c)
    zero[c] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.columns[c].donors.size()));
  objective_and_gradient(d, zero, grad);
  q.linear.resize(static_cast<Eigen::Index>(n));
  for (std::size_t c = 0; c < d.num_columns(); ++c)
    q.linear.segment(static_cast<Eigen::Index>(q.offset[c]), grad[c].size()) = grad[c];
  return q;
}

struct DesignScaling {
  double a_sep = 1.0;
  double a_pool = 0.0;
  double ridge = 0.0;
};

/// Lays out the balance rows for the panel. Weights are restricted to the
/// donor pools; with an intercept every unit's lag window is demeaned.
inline QuadraticDesign build_design(const PanelData& panel, const EventConfig& cfg,
                                    const DonorSets& donors, const SolveOptions& options,
                                    const DesignScaling& scaling) {
  if (donors.size() != cfg.num_treated())
    fail(ErrorKind::InvalidConfig, "donor sets do not match the treated units");
  const bool use_covariates = options.xi > 0;
  if (use_covariates && !panel.has_covariates())
    fail(ErrorKind::NoCovariates, "xi > 0 requires covariates in the panel");

  QuadraticDesign d;
  d.num_units = panel.num_units();
  d.a_sep = scaling.a_sep;
  d.a_pool = scaling.a_pool;
  d.ridge = scaling.ridge;

  if (options.cohort_mode) {
    std::map<int, std::size_t> by_time;
    for (std::size_t j = 0; j < cfg.num_treated(); ++j) {
      const int t0 = panel.treat_index[cfg.treated[j]];
      auto [it, inserted] = by_time.emplace(t0, d.columns.size());
      if (inserted) {
        DesignColumn col;
        col.treat_index = t0;
        col.donors = donors[j];
        col.lags = cfg.lags[j];
        d.columns.push_back(std::move(col));
      }
      auto& col = d.columns[it->second];
      col.members.push_back(j);
      col.lags = std::min(col.lags, cfg.lags[j]);
    }
    for (auto& col : d.columns) col.total = static_cast<double>(col.members.size());
  } else {
    for (std::size_t j = 0; j < cfg.num_treated(); ++j) {
      DesignColumn col;
      col.members = {j};
      col.donors = donors[j];
      col.treat_index = panel.treat_index[cfg.treated[j]];
      col.lags = cfg.lags[j];
      d.columns.push_back(std::move(col));
    }
  }

  const auto num_cov = use_covariates ? panel.covariates->cols() : Eigen::Index{0};
  for (const auto& col : d.columns) d.max_lag = std::max(d.max_lag, col.lags);
  const double G = d.divisor();

  for (auto& col : d.columns) {
    const Eigen::Index rows = col.lags + num_cov;
    const auto width = static_cast<Eigen::Index>(col.donors.size());
    col.target = Eigen::VectorXd::Zero(rows);
    col.donor_rows.resize(rows, width);
    col.sep_base.resize(rows);
    col.pooled_row.resize(static_cast<std::size_t>(rows));

    auto window = [&](std::size_t unit) {
      Eigen::VectorXd w(col.lags);
      for (int l = 1; l <= col.lags; ++l) w(l - 1) = panel.outcomes(unit, col.treat_index - l);
      if (options.intercept) w.array() -= w.mean();
      return w;
    };
    for (auto m : col.members) col.target.head(col.lags) += window(cfg.treated[m]);
    for (Eigen::Index k = 0; k < width; ++k)
      col.donor_rows.col(k).head(col.lags) = window(col.donors[static_cast<std::size_t>(k)]);
    col.sep_base.head(col.lags).setConstant(1.0 / (G * col.lags));
    for (int l = 0; l < col.lags; ++l) col.pooled_row[static_cast<std::size_t>(l)] = l;

    for (Eigen::Index k = 0; k < num_cov; ++k) {
      const Eigen::Index row = col.lags + k;
      for (auto m : col.members) col.target(row) += (*panel.covariates)(cfg.treated[m], k);
      for (Eigen::Index c = 0; c < width; ++c)
        col.donor_rows(row, c) = (*panel.covariates)(col.donors[static_cast<std::size_t>(c)], k);
      col.sep_base(row) = options.xi / G;
      col.pooled_row[static_cast<std::size_t>(row)] = d.max_lag + static_cast<int>(k);
    }
  }
  d.pooled_base.resize(d.max_lag + num_cov);
  d.pooled_base.head(d.max_lag).setConstant(1.0 / d.max_lag);
  d.pooled_base.tail(num_cov).setConstant(options.xi);
  d.pooled_kind.assign(static_cast<std::size_t>(d.max_lag), RowKind::Lag);
  d.pooled_kind.resize(static_cast<std::size_t>(d.max_lag + num_cov), RowKind::Covariate);
  return d;
}

}  // namespace ppscm
