#pragma once

// Batch command-line front end: fit, frontier, placebo, trim, simulate.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ppscm/effects.hpp"
#include "ppscm/error.hpp"
#include "ppscm/inference.hpp"
#include "ppscm/panel.hpp"
#include "ppscm/robustness.hpp"
#include "ppscm/serialize.hpp"
#include "ppscm/simulate.hpp"
#include "ppscm/solver.hpp"
#include "ppscm/tuning.hpp"

namespace ppscm::cli {

inline constexpr const char* kVersion = "1.0.0";

enum class Command { Fit, Frontier, Placebo, Trim, Simulate };
enum class Inference { None, WildBootstrap, Jackknife };

inline std::string to_string(Command c) {
  switch (c) {
    case Command::Fit: return "fit";
    case Command::Frontier: return "frontier";
    case Command::Placebo: return "placebo";
    case Command::Trim: return "trim";
    case Command::Simulate: return "simulate";
  }
  return "fit";
}

inline std::string to_string(Inference i) {
  switch (i) {
    case Inference::None: return "none";
    case Inference::WildBootstrap: return "wild_bootstrap";
    case Inference::Jackknife: return "jackknife";
  }
  return "none";
}

inline Inference parse_inference(const std::string& s) {
  if (s == "none") return Inference::None;
  if (s == "wild_bootstrap") return Inference::WildBootstrap;
  if (s == "jackknife") return Inference::Jackknife;
  fail(ErrorKind::InvalidConfig, "unknown inference method '" + s + "'");
}

struct RunConfig {
  Command command = Command::Fit;
  std::string input;
  PanelSchema schema;
  std::optional<int> horizon;
  std::optional<int> lags;
  SolveOptions solve;
  std::optional<double> nu;
  std::optional<double> xi;
  bool include_onset = true;
  Inference inference = Inference::None;
  int B = 1000;
  std::uint64_t seed = 0;
  double alpha_level = 0.05;
  std::string out_dir = ".";
  bool strict = false;
  int threads = 1;
  std::optional<int> grid;
  int shift = 2;
  int drop = 1;
  std::string dgp = "twfe";
  int reps = 200;
  std::optional<double> bound_delta;
  std::string calibrate_from;
};

inline void validate(const RunConfig& c) {
  if (c.command != Command::Simulate && c.input.empty())
    fail(ErrorKind::InvalidConfig, "--input is required");
  if (c.command != Command::Simulate && !std::filesystem::exists(c.input))
    fail(ErrorKind::InvalidConfig, "input file does not exist: " + c.input);
  if (!c.calibrate_from.empty() && !std::filesystem::exists(c.calibrate_from))
    fail(ErrorKind::InvalidConfig, "calibration file does not exist: " + c.calibrate_from);
  if (c.nu && !(*c.nu >= 0 && *c.nu <= 1)) fail(ErrorKind::InvalidConfig, "nu must lie in [0, 1]");
  if (c.xi && !(*c.xi >= 0)) fail(ErrorKind::InvalidConfig, "xi must be nonnegative");
  if (c.horizon && *c.horizon < 0) fail(ErrorKind::InvalidConfig, "horizon must be nonnegative");
  if (c.lags && *c.lags < 1) fail(ErrorKind::InvalidConfig, "lags must be positive");
  if (c.inference == Inference::WildBootstrap && c.B < 100)
    fail(ErrorKind::InvalidConfig, "bootstrap requires at least 100 draws");
  if (!(c.alpha_level > 0 && c.alpha_level < 1))
    fail(ErrorKind::InvalidConfig, "alpha must lie in (0, 1)");
  if (c.threads < 1) fail(ErrorKind::InvalidConfig, "threads must be positive");
  if (c.grid && *c.grid < 1) fail(ErrorKind::InvalidConfig, "grid must be positive");
  if (c.shift < 1) fail(ErrorKind::InvalidConfig, "shift must be positive");
  if (c.drop < 0) fail(ErrorKind::InvalidConfig, "drop must be nonnegative");
  if (c.reps < 1) fail(ErrorKind::InvalidConfig, "reps must be positive");
  if (c.bound_delta && !(*c.bound_delta > 0)) fail(ErrorKind::InvalidConfig, "bound delta must be positive");
  parse_dgp_kind(c.dgp);
  SolveOptions o = c.solve;
  o.nu = c.nu.value_or(0.5);
  o.xi = c.xi.value_or(0.0);
  ppscm::validate(o);
}

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

inline json to_json(const RunConfig& c) {
  return {{"command", to_string(c.command)},
          {"input", c.input},
          {"schema",
           {{"unit", c.schema.unit},
            {"time", c.schema.time},
            {"outcome", c.schema.outcome},
            {"treat_time", c.schema.treat_time},
            {"covariate_prefix", c.schema.covariate_prefix},
            {"covariates", c.schema.covariates}}},
          {"horizon", optional_json(c.horizon)},
          {"lags", optional_json(c.lags)},
          {"nu", optional_json(c.nu)},
          {"lambda", c.solve.lambda},
          {"xi", optional_json(c.xi)},
          {"intercept", c.solve.intercept},
          {"cohorts", c.solve.cohort_mode},
          {"tol", c.solve.tol},
          {"max_iter", c.solve.max_iter},
          {"include_onset", c.include_onset},
          {"inference", to_string(c.inference)},
          {"B", c.B},
          {"seed", c.seed},
          {"alpha", c.alpha_level},
          {"out", c.out_dir},
          {"strict", c.strict},
          {"threads", c.threads},
          {"grid", optional_json(c.grid)},
          {"shift", c.shift},
          {"drop", c.drop},
          {"dgp", c.dgp},
          {"reps", c.reps},
          {"bound_delta", optional_json(c.bound_delta)},
          {"calibrate_from", c.calibrate_from}};
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) fail(ErrorKind::InvalidConfig, "config file must hold a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      auto opt_int = [&](std::optional<int>& dst) { dst = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>()); };
      auto opt_dbl = [&](std::optional<double>& dst) {
        dst = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      };
      if (key == "command") continue;
      else if (key == "input") c.input = v.get<std::string>();
      else if (key == "schema") {
        if (v.contains("unit")) c.schema.unit = v["unit"].get<std::string>();
        if (v.contains("time")) c.schema.time = v["time"].get<std::string>();
        if (v.contains("outcome")) c.schema.outcome = v["outcome"].get<std::string>();
        if (v.contains("treat_time")) c.schema.treat_time = v["treat_time"].get<std::string>();
        if (v.contains("covariate_prefix")) c.schema.covariate_prefix = v["covariate_prefix"].get<std::string>();
        if (v.contains("covariates")) c.schema.covariates = v["covariates"].get<std::vector<std::string>>();
      }
      else if (key == "horizon") opt_int(c.horizon);
      else if (key == "lags") opt_int(c.lags);
      else if (key == "nu") opt_dbl(c.nu);
      else if (key == "lambda") c.solve.lambda = v.get<double>();
      else if (key == "xi") opt_dbl(c.xi);
      else if (key == "intercept") c.solve.intercept = v.get<bool>();
      else if (key == "cohorts") c.solve.cohort_mode = v.get<bool>();
      else if (key == "tol") c.solve.tol = v.get<double>();
      else if (key == "max_iter") c.solve.max_iter = v.get<int>();
      else if (key == "include_onset") c.include_onset = v.get<bool>();
      else if (key == "inference") c.inference = parse_inference(v.get<std::string>());
      else if (key == "B") c.B = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "alpha") c.alpha_level = v.get<double>();
      else if (key == "out") c.out_dir = v.get<std::string>();
      else if (key == "strict") c.strict = v.get<bool>();
      else if (key == "threads") c.threads = v.get<int>();
      else if (key == "grid") opt_int(c.grid);
      else if (key == "shift") c.shift = v.get<int>();
      else if (key == "drop") c.drop = v.get<int>();
      else if (key == "dgp") c.dgp = v.get<std::string>();
      else if (key == "reps") c.reps = v.get<int>();
      else if (key == "bound_delta") opt_dbl(c.bound_delta);
      else if (key == "calibrate_from") c.calibrate_from = v.get<std::string>();
      else fail(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("bad config value: ") + e.what());
  }
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidConfig, "cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("config file is not valid JSON: ") + e.what());
  }
  apply_json(base, j);
  return base;
}

namespace detail {

inline std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

inline std::filesystem::path prepare_out(const RunConfig& c) {
  std::filesystem::path dir(c.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::InvalidConfig, "cannot create output directory " + c.out_dir);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::InvalidConfig, "cannot write " + path.string());
  out << text;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

struct Prepared {
  PanelData panel;
  EventConfig cfg;
  DonorSets donors;
  SolveOptions options;
  EffectOptions effect_options;
};

inline Prepared prepare(const RunConfig& c) {
  Prepared p;
  p.panel = load_panel(c.input, c.schema);
  if (p.panel.has_covariates()) p.panel = standardize_covariates(p.panel);
  p.cfg = make_event_config(p.panel, c.horizon, c.lags);
  p.donors = donor_sets(p.panel, p.cfg);
  p.options = c.solve;
  p.options.xi = c.xi.value_or(p.panel.has_covariates() ? default_xi(p.panel, p.cfg) : 0.0);
  if (p.options.xi > 0 && !p.panel.has_covariates())
    fail(ErrorKind::NoCovariates, "xi > 0 requires covariate columns in the panel");
  p.effect_options.include_onset = c.include_onset;
  return p;
}

inline json with_config(const RunConfig& c, json body) {
  body["run_config"] = to_json(c);
  body["version"] = kVersion;
  return body;
}

inline std::string interval(const InferenceResult& r) {
  return " [" + fixed(r.ci_lower) + ", " + fixed(r.ci_upper) + "]";
}

inline json pipeline_json(const PipelineResult& p) {
  return {{"nu", p.nu},
          {"nu_hat", p.nu_hat},
          {"nu_source", p.nu_from_heuristic ? "heuristic" : "explicit"},
          {"c_sep", p.normalizers.norm.c_sep},
          {"c_pool", p.normalizers.norm.c_pool},
          {"scale", p.normalizers.scale}};
}

inline int convergence_status(const RunConfig& c, const FitResult& fit, std::ostream& err) {
  if (fit.converged) return 0;
  err << "warning: solver did not converge within " << c.solve.max_iter << " iterations\n";
  return c.strict ? 3 : 0;
}

inline int cmd_fit(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto p = prepare(c);
  const auto pipe = run_pipeline(p.panel, p.cfg, p.donors, p.options, c.nu);
  const auto& fit = pipe.fit;
  const auto effects = estimate_effects(p.panel, p.cfg, fit, p.effect_options);
  const auto dir = prepare_out(c);

  std::vector<InferenceResult> per_k;
  std::optional<InferenceResult> overall;
  if (c.inference == Inference::WildBootstrap) {
    std::vector<int> ks;
    for (int k = 0; k <= p.cfg.horizon; ++k) ks.push_back(k);
    per_k = wild_bootstrap(p.panel, p.cfg, fit, ks, c.B, c.alpha_level, c.seed);
    overall = wild_bootstrap_att(p.panel, p.cfg, fit, p.effect_options, c.B, c.alpha_level, c.seed);
  } else if (c.inference == Inference::Jackknife) {
    SolveOptions fixed_nu = p.options;
    fixed_nu.nu = pipe.nu;
    const auto reps = jackknife_replicates(p.panel, p.cfg, fixed_nu, c.threads);
    per_k = jackknife(reps, effects);
    overall = jackknife_att(reps, effects);
  }

  json fit_json = to_json(fit, p.panel, p.cfg);
  fit_json["pipeline"] = pipeline_json(pipe);
  fit_json["effects"] = to_json(effects, p.panel, p.cfg);
  write_json(dir / "fit.json", with_config(c, fit_json));
  json bal = to_json(fit.balance, p.panel, p.cfg);
  bal["nu"] = pipe.nu;
  bal["nu_hat"] = pipe.nu_hat;
  write_json(dir / "balance.json", with_config(c, bal));
  std::ostringstream csv;
  write_effects_csv(csv, effects);
  write_text(dir / "effects.csv", csv.str());
  if (overall) {
    json inf = json::array();
    for (const auto& r : per_k) inf.push_back(ppscm::to_json(r));
    write_json(dir / "inference.json",
               with_config(c, {{"att", ppscm::to_json(*overall)}, {"att_k", inf}}));
  }
  write_json(dir / "run_config.json", to_json(c));

  out << "nu = " << fixed(pipe.nu, 4) << (pipe.nu_from_heuristic ? " (heuristic)" : " (explicit)") << '\n';
  out << "q_sep = " << fixed(fit.balance.q_sep) << "  q_pool = " << fixed(fit.balance.q_pool) << '\n';
  out << "ATT = " << fixed(effects.att) << (overall ? interval(*overall) : std::string()) << '\n';
  for (int k = 0; k <= p.cfg.horizon; ++k) {
    out << "ATT_" << k << " " << fixed(effects.att_at(k));
    if (!per_k.empty()) out << interval(per_k[static_cast<std::size_t>(k)]);
    out << '\n';
  }
  return convergence_status(c, fit, err);
}

inline int cmd_frontier(const RunConfig& c, std::ostream& out, std::ostream&) {
  const auto p = prepare(c);
  const auto grid = c.grid ? interior_nu_grid(*c.grid) : default_nu_grid();
  const auto nr = normalizers(p.panel, p.cfg, p.donors, p.options);
  const auto pts = trace_frontier(p.panel, p.cfg, p.donors, grid, p.options, p.effect_options, true, &nr.norm);
  const auto tangent = tangent_nu(pts);
  const auto dir = prepare_out(c);
  std::ostringstream csv;
  write_frontier_csv(csv, pts);
  write_text(dir / "frontier.csv", csv.str());
  write_json(dir / "frontier.json",
             with_config(c, {{"points", ppscm::to_json(pts)},
                             {"nu_hat", nu_heuristic(p.cfg, nr.separate_fit)},
                             {"tangent_nu", optional_json(tangent)},
                             {"normalization", ppscm::to_json(nr.norm)}}));
  write_json(dir / "run_config.json", to_json(c));
  out << "frontier points = " << pts.size() << '\n';
  out << "nu_hat = " << fixed(nu_heuristic(p.cfg, nr.separate_fit), 4) << '\n';
  if (tangent) out << "tangent nu = " << fixed(*tangent, 4) << '\n';
  return 0;
}

inline int cmd_placebo(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto p = prepare(c);
  const auto res = placebo_in_time(p.panel, p.cfg, c.shift, p.options, c.nu, p.effect_options);
  const auto dir = prepare_out(c);
  json body = {{"shift", c.shift},
               {"pipeline", pipeline_json(res.pipeline)},
               {"balance", ppscm::to_json(res.pipeline.fit.balance, res.shifted, res.cfg)},
               {"effects", ppscm::to_json(res.effects, res.shifted, res.cfg)}};
  write_json(dir / "placebo.json", with_config(c, body));
  std::ostringstream csv;
  write_effects_csv(csv, res.effects);
  write_text(dir / "placebo_effects.csv", csv.str());
  write_json(dir / "run_config.json", to_json(c));
  out << "placebo shift = " << c.shift << "  nu = " << fixed(res.pipeline.nu, 4) << '\n';
  for (int k = -std::min(c.shift, res.effects.max_lag); k <= res.cfg.horizon; ++k)
    out << "ATT_" << k << " " << fixed(res.effects.att_at(k)) << '\n';
  return convergence_status(c, res.pipeline.fit, err);
}

inline int cmd_trim(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto p = prepare(c);
  const auto full = run_pipeline(p.panel, p.cfg, p.donors, p.options, c.nu);
  const auto res = trim_and_refit(p.panel, p.cfg, full.fit, c.drop, p.options, c.nu, p.effect_options);
  const auto full_effects = estimate_effects(p.panel, p.cfg, full.fit, p.effect_options);
  const auto dir = prepare_out(c);
  json dropped = json::array();
  for (auto u : res.dropped) dropped.push_back(p.panel.unit_ids[u]);
  json body = {{"drop", c.drop},
               {"dropped_units", dropped},
               {"full_att", full_effects.att},
               {"pipeline", pipeline_json(res.pipeline)},
               {"balance", ppscm::to_json(res.pipeline.fit.balance, p.panel, res.cfg)},
               {"effects", ppscm::to_json(res.effects, p.panel, res.cfg)}};
  write_json(dir / "trim.json", with_config(c, body));
  std::ostringstream csv;
  write_effects_csv(csv, res.effects);
  write_text(dir / "trim_effects.csv", csv.str());
  write_json(dir / "run_config.json", to_json(c));
  out << "dropped =";
  for (auto u : res.dropped) out << ' ' << p.panel.unit_ids[u];
  out << '\n';
  out << "ATT (full) = " << fixed(full_effects.att) << "  ATT (trimmed) = " << fixed(res.effects.att) << '\n';
  return convergence_status(c, res.pipeline.fit, err);
}

inline int cmd_simulate(const RunConfig& c, std::ostream& out, std::ostream&) {
  McConfig mc;
  const auto kind = parse_dgp_kind(c.dgp);
  mc.dgp = c.calibrate_from.empty() ? default_dgp(kind) : calibrate(load_panel(c.calibrate_from, c.schema), kind);
  mc.selection = default_selection(kind);
  mc.reps = c.reps;
  mc.seed = c.seed;
  mc.horizon = c.horizon;
  mc.lags = c.lags;
  mc.bootstrap = c.inference == Inference::WildBootstrap ? c.B : 0;
  mc.alpha_level = c.alpha_level;
  mc.bound_delta = c.bound_delta;
  mc.threads = c.threads;
  for (auto& e : mc.estimators) {
    e.options.lambda = c.solve.lambda;
    e.options.tol = c.solve.tol;
    e.options.max_iter = c.solve.max_iter;
  }
  const auto res = run_monte_carlo(mc);
  const auto dir = prepare_out(c);
  json reports = json::array();
  for (const auto& r : res.reports) reports.push_back(ppscm::to_json(r));
  write_json(dir / "mc_report.json",
             with_config(c, {{"dgp", ppscm::to_json(mc.dgp)},
                             {"reports", reports},
                             {"draws", res.draws},
                             {"rejected", res.rejected}}));
  std::ostringstream csv;
  write_mc_records_csv(csv, res.records);
  write_text(dir / "mc_records.csv", csv.str());
  write_json(dir / "run_config.json", to_json(c));
  for (const auto& r : res.reports)
    out << r.estimator << ": bias = " << fixed(r.bias_att) << "  mad_att = " << fixed(r.mad_att)
        << "  mad_unit = " << fixed(r.mad_unit) << '\n';
  return 0;
}

inline std::string version_text() {
  return std::string("ppscm ") + kVersion +
         "\n"
         "objective: nu * (q_pool / C_pool)^2 + (1 - nu) * (q_sep / C_sep)^2 + lambda * ||Gamma||_F^2\n"
         "normaliser fit: unnormalised q_sep^2 + lambda * scale * ||Gamma||_F^2\n"
         "pooled imbalance uses the 1/J divisor (average over treated units)\n"
         "bootstrap intervals are basic: [ATT - q(1 - a/2), ATT - q(a/2)]\n";
}

/// Binds one flag into `flags` and records how to copy it over a config
/// loaded from file when the flag was given.
struct Binder {
  RunConfig& flags;
  std::vector<std::function<void(RunConfig&)>> appliers;

  template <class Get>
  CLI::Option* add(CLI::App* app, const std::string& name, Get get, const std::string& desc) {
    auto* opt = app->add_option(name, get(flags), desc);
    appliers.push_back([this, opt, get](RunConfig& dst) {
      if (opt->count() > 0) get(dst) = get(flags);
    });
    return opt;
  }

  template <class Get>
  CLI::Option* flag(CLI::App* app, const std::string& name, Get get, const std::string& desc) {
    auto* opt = app->add_flag(name, get(flags), desc);
    appliers.push_back([this, opt, get](RunConfig& dst) {
      if (opt->count() > 0) get(dst) = get(flags);
    });
    return opt;
  }
};

}  // namespace detail

inline int exit_code(const Error& e) { return e.is_config_error() ? 2 : 1; }

/// Runs one command line; returns the process exit status.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Partially pooled synthetic control for staggered adoption"};
  app.require_subcommand(0, 1);
  bool show_version = false;
  app.add_flag("--version", show_version, "Print version and conventions");

  RunConfig flags;
  detail::Binder b{flags, {}};
  std::string config_path;
  int bootstrap = 0;
  bool use_jackknife = false;
  bool exclude_onset = false;

  struct Sub {
    Command command;
    CLI::App* app;
    CLI::Option* bootstrap = nullptr;
    CLI::Option* jackknife = nullptr;
    CLI::Option* exclude_onset = nullptr;
  };
  std::vector<Sub> subs;
  auto make = [&](Command cmd, const std::string& desc) {
    Sub s{cmd, app.add_subcommand(to_string(cmd), desc)};
    auto* a = s.app;
    a->add_option("--config", config_path, "JSON run configuration; flags override it");
    if (cmd != Command::Simulate)
      b.add(a, "--input", [](RunConfig& c) -> auto& { return c.input; }, "Long-format panel CSV");
    b.add(a, "--unit-col", [](RunConfig& c) -> auto& { return c.schema.unit; }, "Unit id column");
    b.add(a, "--time-col", [](RunConfig& c) -> auto& { return c.schema.time; }, "Time column");
    b.add(a, "--outcome-col", [](RunConfig& c) -> auto& { return c.schema.outcome; }, "Outcome column");
    b.add(a, "--treat-col", [](RunConfig& c) -> auto& { return c.schema.treat_time; }, "Adoption time column");
    b.add(a, "--covariate-prefix", [](RunConfig& c) -> auto& { return c.schema.covariate_prefix; },
          "Prefix of covariate columns");
    b.add(a, "--covariates", [](RunConfig& c) -> auto& { return c.schema.covariates; },
          "Explicit covariate columns");
    b.add(a, "--horizon", [](RunConfig& c) -> auto& { return c.horizon; }, "Post-treatment horizon K");
    b.add(a, "--lags", [](RunConfig& c) -> auto& { return c.lags; }, "Maximum lag window L");
    b.add(a, "--lambda", [](RunConfig& c) -> auto& { return c.solve.lambda; }, "Ridge penalty");
    b.add(a, "--tol", [](RunConfig& c) -> auto& { return c.solve.tol; }, "Convergence tolerance");
    b.add(a, "--max-iter", [](RunConfig& c) -> auto& { return c.solve.max_iter; }, "Iteration cap");
    b.add(a, "--seed", [](RunConfig& c) -> auto& { return c.seed; }, "Random seed");
    b.add(a, "--alpha", [](RunConfig& c) -> auto& { return c.alpha_level; }, "Interval level 1 - coverage");
    b.add(a, "--out", [](RunConfig& c) -> auto& { return c.out_dir; }, "Output directory");
    b.add(a, "--threads", [](RunConfig& c) -> auto& { return c.threads; }, "Worker threads");
    b.flag(a, "--strict", [](RunConfig& c) -> auto& { return c.strict; }, "Exit 3 on non-convergence");
    s.bootstrap = a->add_option("--bootstrap", bootstrap, "Wild bootstrap with B draws");
    s.exclude_onset = a->add_flag("--exclude-onset", exclude_onset,
                                  "Average ATT over k = 1..K instead of k = 0..K");
    if (cmd != Command::Simulate) {
      b.add(a, "--nu", [](RunConfig& c) -> auto& { return c.nu; }, "Pooling weight in [0, 1]");
      b.add(a, "--xi", [](RunConfig& c) -> auto& { return c.xi; }, "Covariate weight");
      b.flag(a, "--intercept", [](RunConfig& c) -> auto& { return c.solve.intercept; }, "Fit unit intercepts");
      b.flag(a, "--cohorts", [](RunConfig& c) -> auto& { return c.solve.cohort_mode; }, "Pool units by adoption time");
      s.jackknife = a->add_flag("--jackknife", use_jackknife, "Leave-one-unit-out standard errors");
    }
    subs.push_back(s);
    return a;
  };
  make(Command::Fit, "Estimate weights, effects and intervals");
  auto* frontier = make(Command::Frontier, "Trace the balance possibility frontier");
  b.add(frontier, "--grid", [](RunConfig& c) -> auto& { return c.grid; }, "Number of interior nu values");
  auto* placebo = make(Command::Placebo, "In-time placebo with treatment moved earlier");
  b.add(placebo, "--shift", [](RunConfig& c) -> auto& { return c.shift; }, "Periods to move treatment back");
  auto* trim = make(Command::Trim, "Drop the worst-fit treated units and refit");
  b.add(trim, "--drop", [](RunConfig& c) -> auto& { return c.drop; }, "Number of treated units to drop");
  auto* sim = make(Command::Simulate, "Monte Carlo study on a synthetic panel");
  b.add(sim, "--dgp", [](RunConfig& c) -> auto& { return c.dgp; }, "twfe, factor or ar");
  b.add(sim, "--reps", [](RunConfig& c) -> auto& { return c.reps; }, "Replications");
  b.add(sim, "--bound-delta", [](RunConfig& c) -> auto& { return c.bound_delta; }, "Bound delta (ar only)");
  b.add(sim, "--calibrate-from", [](RunConfig& c) -> auto& { return c.calibrate_from; },
        "Calibrate the DGP to this panel");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, eo;
    const int code = app.exit(e, o, eo);
    out << o.str();
    err << eo.str();
    return code == 0 ? 0 : 2;
  }
  if (show_version) {
    out << detail::version_text();
    return 0;
  }
  const Sub* chosen = nullptr;
  for (const auto& s : subs)
    if (s.app->parsed()) chosen = &s;
  if (!chosen) {
    err << "error: a subcommand is required (fit, frontier, placebo, trim, simulate)\n";
    return 2;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    cfg.command = chosen->command;
    for (auto& apply : b.appliers) apply(cfg);
    if (chosen->bootstrap->count() > 0) {
      cfg.inference = Inference::WildBootstrap;
      cfg.B = bootstrap;
    }
    if (chosen->jackknife && chosen->jackknife->count() > 0) cfg.inference = Inference::Jackknife;
    if (chosen->bootstrap->count() > 0 && chosen->jackknife && chosen->jackknife->count() > 0)
      fail(ErrorKind::InvalidConfig, "--bootstrap and --jackknife are mutually exclusive");
    if (chosen->exclude_onset->count() > 0) cfg.include_onset = false;
    validate(cfg);
    switch (cfg.command) {
      case Command::Fit: return detail::cmd_fit(cfg, out, err);
      case Command::Frontier: return detail::cmd_frontier(cfg, out, err);
      case Command::Placebo: return detail::cmd_placebo(cfg, out, err);
      case Command::Trim: return detail::cmd_trim(cfg, out, err);
      case Command::Simulate: return detail::cmd_simulate(cfg, out, err);
    }
  } catch (const Error& e) {
    err << "error [" << ppscm::to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace ppscm::cli
