#pragma once

// Panel data model: outcome matrix, adoption schedule, event-time windows,
// donor pools and long-format CSV ingestion.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ppscm/error.hpp"

namespace ppscm {

/// Treatment index used for units that are never treated within the panel.
inline constexpr int kNever = std::numeric_limits<int>::max();

struct PanelData {
  Eigen::MatrixXd outcomes;                  // N x T
  std::vector<std::string> unit_ids;         // N
  std::vector<long> times;                   // T, contiguous calendar times
  std::vector<int> treat_index;              // N, 0-based index into times or kNever
  std::optional<Eigen::MatrixXd> covariates; // N x d, time-invariant
  std::vector<std::string> covariate_names;

  [[nodiscard]] std::size_t num_units() const { return unit_ids.size(); }
  [[nodiscard]] std::size_t num_times() const { return times.size(); }
  [[nodiscard]] bool never_treated(std::size_t i) const { return treat_index[i] == kNever; }
  [[nodiscard]] std::size_t num_never_treated() const {
    return static_cast<std::size_t>(
        std::count(treat_index.begin(), treat_index.end(), kNever));
  }
  [[nodiscard]] bool has_covariates() const {
    return covariates.has_value() && covariates->cols() > 0;
  }

  /// Ever-treated units ordered by adoption time, ties broken by position.
  [[nodiscard]] std::vector<std::size_t> treated_units() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < num_units(); ++i)
      if (!never_treated(i)) out.push_back(i);
    std::stable_sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
      return treat_index[a] < treat_index[b];
    });
    return out;
  }
};

/// Throws when the panel violates the structural invariants every estimator
/// relies on.
inline void validate(const PanelData& panel) {
  const auto n = panel.num_units();
  const auto t = panel.num_times();
  if (n < 2 || t < 2)
    fail(ErrorKind::MalformedInput, "panel needs at least 2 units and 2 time periods");
  if (static_cast<std::size_t>(panel.outcomes.rows()) != n ||
      static_cast<std::size_t>(panel.outcomes.cols()) != t)
    fail(ErrorKind::MalformedInput, "outcome matrix does not match unit/time labels");
  if (panel.treat_index.size() != n)
    fail(ErrorKind::MalformedInput, "treatment schedule length does not match units");
  for (std::size_t k = 1; k < t; ++k)
    if (panel.times[k] != panel.times[k - 1] + 1)
      fail(ErrorKind::RaggedPanel, "time grid is not contiguous between " +
                                       std::to_string(panel.times[k - 1]) + " and " +
                                       std::to_string(panel.times[k]));
  if (!panel.outcomes.allFinite())
    fail(ErrorKind::MalformedInput, "outcomes contain non-finite values");
  if (panel.num_never_treated() == 0)
    fail(ErrorKind::NoDonors, "no never-treated units in panel");
  if (panel.covariates) {
    if (static_cast<std::size_t>(panel.covariates->rows()) != n)
      fail(ErrorKind::MalformedInput, "covariate matrix does not match units");
    if (static_cast<std::size_t>(panel.covariates->cols()) != panel.covariate_names.size())
      fail(ErrorKind::MalformedInput, "covariate names do not match covariate columns");
  }
}

/// Event-time configuration: post-treatment horizon K and the lag window
/// L_j of each analysed treated unit. `treated` holds panel unit indices
/// sorted by adoption time; it may be a subset of the ever-treated units
/// (units left out remain in the panel as potential donors).
struct EventConfig {
  int horizon = 0;
  std::vector<std::size_t> treated;
  std::vector<int> lags;

  [[nodiscard]] std::size_t num_treated() const { return treated.size(); }
  [[nodiscard]] int max_lag() const {
    return lags.empty() ? 0 : *std::max_element(lags.begin(), lags.end());
  }
  [[nodiscard]] bool uniform_lags() const {
    return std::adjacent_find(lags.begin(), lags.end(), std::not_equal_to<>()) == lags.end();
  }
};

inline void validate(const PanelData& panel, const EventConfig& cfg) {
  if (cfg.treated.empty()) fail(ErrorKind::InvalidConfig, "no treated units to analyse");
  if (cfg.lags.size() != cfg.treated.size())
    fail(ErrorKind::InvalidConfig, "one lag window per treated unit is required");
  if (cfg.horizon < 0) fail(ErrorKind::InvalidConfig, "horizon must be nonnegative");
  const auto last = static_cast<long>(panel.num_times()) - 1;
  for (std::size_t j = 0; j < cfg.treated.size(); ++j) {
    const auto unit = cfg.treated[j];
    if (unit >= panel.num_units() || panel.never_treated(unit))
      fail(ErrorKind::InvalidConfig, "configured treated unit is not treated in the panel");
    if (j > 0 && panel.treat_index[cfg.treated[j - 1]] > panel.treat_index[unit])
      fail(ErrorKind::InvalidConfig, "treated units must be ordered by adoption time");
    const int t0 = panel.treat_index[unit];
    if (t0 < 1)
      fail(ErrorKind::InsufficientPrePeriods,
           "unit " + panel.unit_ids[unit] + " has no pre-treatment period");
    if (cfg.lags[j] < 1 || cfg.lags[j] > t0)
      fail(ErrorKind::InvalidConfig, "lag window for unit " + panel.unit_ids[unit] +
                                         " must lie in [1, " + std::to_string(t0) + "]");
    if (static_cast<long>(t0) + cfg.horizon > last)
      fail(ErrorKind::InvalidConfig,
           "horizon " + std::to_string(cfg.horizon) + " exceeds the periods observed after " +
               "treatment for unit " + panel.unit_ids[unit]);
  }
}

/// Builds the configuration for all ever-treated units. Without a horizon the
/// largest K every treated unit supports is used; `lags`, when given, caps
/// each window at min(lags, T_j - 1), otherwise all available lags are used.
inline EventConfig make_event_config(const PanelData& panel,
                                     std::optional<int> horizon = std::nullopt,
                                     std::optional<int> lags = std::nullopt) {
  validate(panel);
  EventConfig cfg;
  cfg.treated = panel.treated_units();
  if (cfg.treated.empty()) fail(ErrorKind::InvalidConfig, "panel has no treated units");
  const int last = static_cast<int>(panel.num_times()) - 1;
  int max_horizon = std::numeric_limits<int>::max();
  for (auto unit : cfg.treated) {
    const int t0 = panel.treat_index[unit];
    if (t0 < 1)
      fail(ErrorKind::InsufficientPrePeriods,
           "unit " + panel.unit_ids[unit] + " is treated in the first period");
    max_horizon = std::min(max_horizon, last - t0);
    int window = t0;
    if (lags) {
      if (*lags < 1) fail(ErrorKind::InvalidConfig, "lags must be positive");
      window = std::min(*lags, t0);
    }
    cfg.lags.push_back(window);
  }
  cfg.horizon = horizon.value_or(max_horizon);
  validate(panel, cfg);
  return cfg;
}

/// Donor pools D_{jK} = {i : T_i > T_j + K}, one per treated unit.
struct DonorSets {
  std::vector<std::vector<std::size_t>> sets;

  [[nodiscard]] const std::vector<std::size_t>& operator[](std::size_t j) const { return sets[j]; }
  [[nodiscard]] std::size_t size() const { return sets.size(); }
  [[nodiscard]] bool contains(std::size_t j, std::size_t unit) const {
    return std::binary_search(sets[j].begin(), sets[j].end(), unit);
  }
};

inline DonorSets donor_sets(const PanelData& panel, const EventConfig& cfg) {
  DonorSets out;
  out.sets.reserve(cfg.num_treated());
  for (auto unit : cfg.treated) {
    const long cutoff = static_cast<long>(panel.treat_index[unit]) + cfg.horizon;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < panel.num_units(); ++i)
      if (static_cast<long>(panel.treat_index[i]) > cutoff) pool.push_back(i);
    if (pool.empty())
      fail(ErrorKind::NoDonors, "no donors available for treated unit " + panel.unit_ids[unit]);
    out.sets.push_back(std::move(pool));
  }
  return out;
}

/// Outcomes inside treated unit j's lag window, column l-1 holding period
/// T_j - l for every unit (N x L_j).
inline Eigen::MatrixXd lag_window(const PanelData& panel, const EventConfig& cfg, std::size_t j) {
  const int t0 = panel.treat_index[cfg.treated[j]];
  const int lags = cfg.lags[j];
  Eigen::MatrixXd out(panel.num_units(), lags);
  for (int l = 1; l <= lags; ++l) out.col(l - 1) = panel.outcomes.col(t0 - l);
  return out;
}

/// Residualised outcomes for each treated unit's lag window:
/// Y_{i,T_j-l} minus unit i's mean over that same window.
inline std::vector<Eigen::MatrixXd> demean_residuals(const PanelData& panel,
                                                     const EventConfig& cfg) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(cfg.num_treated());
  for (std::size_t j = 0; j < cfg.num_treated(); ++j) {
    Eigen::MatrixXd window = lag_window(panel, cfg, j);
    const Eigen::VectorXd means = window.rowwise().mean();
    window.colwise() -= means;
    out.push_back(std::move(window));
  }
  return out;
}

/// Copy of the panel with each covariate centred and scaled to unit sample
/// variance across all units. Constant covariates are only centred.
inline PanelData standardize_covariates(PanelData panel) {
  if (!panel.has_covariates()) return panel;
  auto& x = *panel.covariates;
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    x.col(c).array() -= mean;
    const double var = n > 1 ? x.col(c).squaredNorm() / (n - 1) : 0.0;
    if (var > 0) x.col(c) /= std::sqrt(var);
  }
  return panel;
}

/// Panel restricted to the listed units, in the given order.
inline PanelData subset_units(const PanelData& panel, const std::vector<std::size_t>& keep) {
  PanelData out;
  out.times = panel.times;
  out.covariate_names = panel.covariate_names;
  out.outcomes.resize(static_cast<Eigen::Index>(keep.size()), panel.outcomes.cols());
  if (panel.covariates) out.covariates = Eigen::MatrixXd(keep.size(), panel.covariates->cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto i = keep[r];
    out.outcomes.row(r) = panel.outcomes.row(i);
    out.unit_ids.push_back(panel.unit_ids[i]);
    out.treat_index.push_back(panel.treat_index[i]);
    if (panel.covariates) out.covariates->row(r) = panel.covariates->row(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct PanelSchema {
  std::string unit = "unit";
  std::string time = "time";
  std::string outcome = "outcome";
  std::string treat_time = "treat_time";
  std::string covariate_prefix = "x_";
  /// Explicit covariate columns; when empty every column with the prefix is used.
  std::vector<std::string> covariates;
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          field.push_back('"');
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view text, const std::string& where) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end)
    fail(ErrorKind::MalformedInput, "cannot parse number '" + std::string(text) + "' " + where);
  return value;
}

inline long parse_long(std::string_view text, const std::string& where) {
  text = trim(text);
  long value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end)
    fail(ErrorKind::MalformedInput, "cannot parse integer '" + std::string(text) + "' " + where);
  return value;
}

inline bool is_never_token(std::string_view text) {
  text = trim(text);
  return text.empty() || text == "Inf" || text == "inf" || text == "INF";
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Ids of units and calendar times, in the order first seen / ascending.
inline PanelData read_panel_csv(std::istream& in, const PanelSchema& schema = {}) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::MalformedInput, "empty panel file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto header = detail::split_csv_line(line);
  for (auto& h : header) h = std::string(detail::trim(h));

  auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto unit_col = find_col(schema.unit);
  const auto time_col = find_col(schema.time);
  const auto outcome_col = find_col(schema.outcome);
  if (!unit_col || !time_col || !outcome_col)
    fail(ErrorKind::MalformedInput, "header must contain columns '" + schema.unit + "', '" +
                                        schema.time + "' and '" + schema.outcome + "'");
  const auto treat_col = find_col(schema.treat_time);

  std::vector<std::size_t> cov_cols;
  std::vector<std::string> cov_names;
  if (!schema.covariates.empty()) {
    for (const auto& name : schema.covariates) {
      auto c = find_col(name);
      if (!c) fail(ErrorKind::MalformedInput, "covariate column '" + name + "' not found");
      cov_cols.push_back(*c);
      cov_names.push_back(name);
    }
  } else if (!schema.covariate_prefix.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c].rfind(schema.covariate_prefix, 0) == 0 &&
          header[c].size() > schema.covariate_prefix.size()) {
        cov_cols.push_back(c);
        cov_names.push_back(header[c].substr(schema.covariate_prefix.size()));
      }
  }

  struct Row {
    std::size_t unit;
    long time;
    double outcome;
    std::optional<long> treat;  // nullopt = never
    std::vector<double> covs;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::map<std::string, std::size_t> unit_lookup;
  std::vector<std::string> unit_ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    const std::string where = "(line " + std::to_string(line_no) + ")";
    if (fields.size() != header.size())
      fail(ErrorKind::MalformedInput, "wrong number of fields " + where);
    Row row;
    row.line = line_no;
    const std::string id(detail::trim(fields[*unit_col]));
    auto [it, inserted] = unit_lookup.emplace(id, unit_ids.size());
    if (inserted) unit_ids.push_back(id);
    row.unit = it->second;
    row.time = detail::parse_long(fields[*time_col], where);
    if (detail::trim(fields[*outcome_col]).empty())
      fail(ErrorKind::RaggedPanel,
           "missing outcome for unit " + id + " at time " + std::to_string(row.time));
    row.outcome = detail::parse_double(fields[*outcome_col], where);
    if (treat_col && !detail::is_never_token(fields[*treat_col]))
      row.treat = detail::parse_long(fields[*treat_col], where);
    for (auto c : cov_cols) row.covs.push_back(detail::parse_double(fields[c], where));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorKind::MalformedInput, "panel file has no data rows");

  long t_min = rows.front().time, t_max = rows.front().time;
  for (const auto& r : rows) {
    t_min = std::min(t_min, r.time);
    t_max = std::max(t_max, r.time);
  }
  std::vector<bool> seen_time(static_cast<std::size_t>(t_max - t_min + 1), false);
  for (const auto& r : rows) seen_time[static_cast<std::size_t>(r.time - t_min)] = true;
  for (std::size_t k = 0; k < seen_time.size(); ++k)
    if (!seen_time[k])
      fail(ErrorKind::RaggedPanel, "time grid has a gap at " + std::to_string(t_min + static_cast<long>(k)));

  const auto n = unit_ids.size();
  const auto t = seen_time.size();
  PanelData panel;
  panel.unit_ids = unit_ids;
  panel.times.resize(t);
  std::iota(panel.times.begin(), panel.times.end(), t_min);
  panel.outcomes = Eigen::MatrixXd::Constant(n, t, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::optional<std::optional<long>>> treat(n);
  std::vector<std::vector<bool>> filled(n, std::vector<bool>(t, false));
  if (!cov_cols.empty()) {
    panel.covariates = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n),
                                                 static_cast<Eigen::Index>(cov_cols.size()),
                                                 std::numeric_limits<double>::quiet_NaN());
    panel.covariate_names = cov_names;
  }
  for (const auto& r : rows) {
    const auto tt = static_cast<std::size_t>(r.time - t_min);
    if (filled[r.unit][tt])
      fail(ErrorKind::MalformedInput, "duplicate row for unit " + unit_ids[r.unit] + " at time " +
                                          std::to_string(r.time));
    filled[r.unit][tt] = true;
    panel.outcomes(r.unit, tt) = r.outcome;
    if (!treat[r.unit]) {
      treat[r.unit] = r.treat;
    } else if (*treat[r.unit] != r.treat) {
      fail(ErrorKind::InconsistentTreatment,
           "treat_time varies within unit " + unit_ids[r.unit] + " (line " +
               std::to_string(r.line) + ")");
    }
    for (std::size_t c = 0; c < cov_cols.size(); ++c) {
      double& slot = (*panel.covariates)(r.unit, c);
      if (std::isnan(slot)) {
        slot = r.covs[c];
      } else if (slot != r.covs[c]) {
        fail(ErrorKind::MalformedInput, "covariate " + cov_names[c] + " varies within unit " +
                                            unit_ids[r.unit]);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t tt = 0; tt < t; ++tt)
      if (!filled[i][tt])
        fail(ErrorKind::RaggedPanel, "missing row for unit " + unit_ids[i] + " at time " +
                                         std::to_string(t_min + static_cast<long>(tt)));

  panel.treat_index.resize(n, kNever);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& tr = *treat[i];
    if (!tr || *tr > t_max) continue;  // adopting after the panel ends counts as never treated
    panel.treat_index[i] = static_cast<int>(std::max(0L, *tr - t_min));
    if (*tr < t_min)
      fail(ErrorKind::InsufficientPrePeriods,
           "unit " + unit_ids[i] + " is treated before the first observed period");
  }
  validate(panel);
  return panel;
}

inline PanelData load_panel(const std::string& path, const PanelSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidConfig, "cannot open panel file " + path);
  return read_panel_csv(in, schema);
}

inline void write_panel_csv(std::ostream& out, const PanelData& panel) {
  out << "unit,time,outcome,treat_time";
  for (const auto& name : panel.covariate_names) out << ",x_" << name;
  out << '\n';
  for (std::size_t i = 0; i < panel.num_units(); ++i) {
    const std::string treat =
        panel.never_treated(i) ? std::string() : std::to_string(panel.times[panel.treat_index[i]]);
    for (std::size_t t = 0; t < panel.num_times(); ++t) {
      const auto& id = panel.unit_ids[i];
      if (id.find_first_of(",\"") != std::string::npos) {
        std::string esc;
        for (char c : id) {
          if (c == '"') esc.push_back('"');
          esc.push_back(c);
        }
        out << '"' << esc << '"';
      } else {
        out << id;
      }
      out << ',' << panel.times[t] << ',' << detail::format_double(panel.outcomes(i, t)) << ','
          << treat;
      if (panel.covariates)
        for (Eigen::Index c = 0; c < panel.covariates->cols(); ++c)
          out << ',' << detail::format_double((*panel.covariates)(i, c));
      out << '\n';
    }
  }
}

inline void write_panel(const PanelData& panel, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidConfig, "cannot write panel file " + path);
  write_panel_csv(out, panel);
}

}  // namespace ppscm
