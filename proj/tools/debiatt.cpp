// debiatt command-line front end.
//
//   debiatt simulate  --preset paper-1cov --reps 2 --seed 7 --out runs/sim
//   debiatt fit-var   --panel runs/sim/panel_rep0.csv --out runs/var
//   debiatt estimate  --panel runs/sim/panel_rep0.csv --estimators oracle,debiased --out runs/est
//   debiatt benchmark --preset paper-1cov --sigma-grid 0.4,0.8,1.2,1.6 --reps 100 --out runs/bench
//   debiatt report    --summary runs/bench/summary.csv

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "debiatt/additive.hpp"
#include "debiatt/bench.hpp"
#include "debiatt/error.hpp"
#include "debiatt/panel.hpp"
#include "debiatt/sim.hpp"
#include "debiatt/var_model.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace debiatt;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4 };

struct ScenarioFlags {
  std::string preset;
  std::string config;
  std::vector<std::string> overrides;
};

struct RunConfig {
  ScenarioFlags scenario;
  std::uint64_t seed = 1;
  int reps = 1;
  int truth_reps = 0;  // 0: same as reps
  std::string out = ".";
  int jobs = 0;
  std::string estimators;
  std::string fallback = "psd-floor";
  std::string panel;
  std::string var_model;
  std::string sigma_grid;
  std::string summary;
};

void add_scenario_flags(CLI::App* cmd, ScenarioFlags& f) {
  cmd->add_option("--preset", f.preset, "Scenario preset (paper-1cov, paper-3cov, paper-6cov)");
  cmd->add_option("--config", f.config, "Scenario file (key = value lines)");
  cmd->add_option("--set", f.overrides, "Scenario override key=value (repeatable)");
}

SimParams resolve_scenario(const ScenarioFlags& f, bool required = true) {
  if (!f.preset.empty() && !f.config.empty()) {
    throw ConfigError("--preset and --config are mutually exclusive");
  }
  if (f.preset.empty() && f.config.empty() && required && f.overrides.empty()) {
    throw ConfigError("a scenario is required: pass --preset or --config");
  }
  SimParams p = f.config.empty() ? preset(f.preset.empty() ? "paper-1cov" : f.preset)
                                 : load_scenario(f.config);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("--set expects key=value, got '{}'", kv));
    apply_override(p, kv.substr(0, eq), kv.substr(eq + 1));
  }
  p.validate();
  return p;
}

std::string scenario_name(const ScenarioFlags& f) {
  if (!f.config.empty()) return fs::path(f.config).filename().string();
  return f.preset.empty() ? "paper-1cov" : f.preset;
}

int effective_jobs(int jobs) {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw DataError(fmt::format("cannot create output directory {}", dir.string()));
  }
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << text;
}

json params_json(const SimParams& p) {
  json j = json::object();
  for (const auto& [k, v] : describe(p)) j[k] = v;
  return j;
}

void write_manifest(const fs::path& dir, json manifest) {
  manifest["tool"] = "debiatt";
  manifest["version"] = kVersion;
  manifest["seed_derivation"] =
      "mt19937_64 seeded with splitmix64(splitmix64(seed ^ fnv1a64(tag)) + index)";
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& cfg) {
  SimParams params = resolve_scenario(cfg.scenario);
  if (cfg.reps < 1) throw ConfigError("--reps must be >= 1");
  const fs::path dir = prepare_out(cfg.out);
  json seeds = json::array();
  for (int r = 0; r < cfg.reps; ++r) {
    const std::uint64_t seed = derive_seed(cfg.seed, "simulate", static_cast<std::uint64_t>(r));
    Rng rng(seed);
    const PanelDataset panel = simulate_cohort(params, rng);
    write_panel(dir / fmt::format("panel_rep{}.csv", r), panel);
    seeds.push_back({{"replicate", r}, {"stream", "simulate"}, {"seed", seed}});
  }
  write_manifest(dir, {{"command", "simulate"},
                       {"scenario", scenario_name(cfg.scenario)},
                       {"seed", cfg.seed},
                       {"reps", cfg.reps},
                       {"parameters", params_json(params)},
                       {"replicate_seeds", seeds}});
  std::cerr << fmt::format("wrote {} panel(s) to {}\n", cfg.reps, dir.string());
  return kOk;
}

int cmd_fit_var(const RunConfig& cfg) {
  if (cfg.panel.empty()) throw ConfigError("fit-var needs --panel");
  const PanelDataset panel = load_panel(cfg.panel);
  const VarModel model = fit_var(panel);
  const fs::path dir = prepare_out(cfg.out);
  write_var_model(dir / "var_model.txt", model);
  write_manifest(dir, {{"command", "fit-var"}, {"panel", cfg.panel}, {"n_obs", model.n_obs}});
  std::cerr << fmt::format("VAR(1) fitted on {} transitions -> {}\n", model.n_obs,
                           (dir / "var_model.txt").string());
  return kOk;
}

int cmd_estimate(const RunConfig& cfg) {
  if (cfg.panel.empty()) throw ConfigError("estimate needs --panel");
  const PanelDataset panel = load_panel(cfg.panel);
  std::vector<Estimator> selected;
  if (cfg.estimators.empty()) {
    if (panel.has_true_counterfactuals()) selected.push_back(Estimator::Oracle);
    selected.insert(selected.end(), {Estimator::Naive, Estimator::Uncorrected, Estimator::Debiased});
  } else {
    for (const auto& name : split_list(cfg.estimators)) selected.push_back(parse_estimator(name));
  }
  FitOptions options;
  options.fallback = FallbackPolicy::parse(cfg.fallback);

  const bool needs_var = std::any_of(selected.begin(), selected.end(), [](Estimator e) {
    return e == Estimator::Uncorrected || e == Estimator::Debiased || e == Estimator::DebiasedTrue;
  });
  const fs::path dir = prepare_out(cfg.out);
  std::optional<VarModel> model;
  std::shared_ptr<const ForecastSet> forecasts;
  if (needs_var) {
    model = cfg.var_model.empty() ? fit_var(panel) : read_var_model(fs::path(cfg.var_model));
    write_var_model(dir / "var_model.txt", *model);
    forecasts = std::make_shared<const ForecastSet>(forecast_all(*model, panel));
  }

  const int big_k = panel.grid.intervals();
  json outputs = json::array();
  std::optional<SimParams> params;
  for (Estimator e : selected) {
    CoefficientPaths paths;
    switch (e) {
      case Estimator::Oracle:
        paths = fit(panel, CovariateSource::true_counterfactual(), options);
        break;
      case Estimator::Naive:
        paths = fit(panel, CovariateSource::observed(), options);
        break;
      case Estimator::Uncorrected:
        paths = fit(panel, CovariateSource::forecast(forecasts), options);
        break;
      case Estimator::Debiased:
        paths = fit_debiased(panel, forecasts, error_covariance(*model, big_k), options);
        break;
      case Estimator::DebiasedTrue:
        params = resolve_scenario(cfg.scenario, false);
        if (params->d_x != panel.d_x) {
          throw ConfigError("debiased_true: scenario d_x does not match the panel");
        }
        paths = fit_debiased(panel, forecasts, generator_error_covariance(*params, big_k), options);
        break;
    }
    paths.label = to_string(e);
    std::ostringstream coef, cum;
    write_coefficients_csv(coef, paths);
    write_cumulative_csv(cum, paths);
    write_text(dir / fmt::format("coef_{}.csv", to_string(e)), coef.str());
    write_text(dir / fmt::format("cumulative_{}.csv", to_string(e)), cum.str());
    const auto flagged = std::count(paths.fallback.begin(), paths.fallback.end(), true);
    outputs.push_back({{"estimator", to_string(e)}, {"fallback_intervals", flagged}});
    if (flagged > 0) {
      std::cerr << fmt::format("{}: fallback applied on {} interval(s)\n", to_string(e), flagged);
    }
  }
  json manifest = {{"command", "estimate"},
                   {"panel", cfg.panel},
                   {"fallback", options.fallback.str()},
                   {"estimators", outputs}};
  if (params) manifest["parameters"] = params_json(*params);
  if (!cfg.var_model.empty()) manifest["var_model"] = cfg.var_model;
  write_manifest(dir, manifest);
  return kOk;
}

int cmd_benchmark(const RunConfig& cfg) {
  SimParams base = resolve_scenario(cfg.scenario);
  if (cfg.reps < 1) throw ConfigError("--reps must be >= 1");
  std::vector<SimParams> settings;
  if (cfg.sigma_grid.empty()) {
    settings.push_back(base);
  } else {
    for (const auto& s : split_list(cfg.sigma_grid)) {
      SimParams p = base;
      apply_override(p, "sigma", s);
      p.validate();
      settings.push_back(p);
    }
  }
  BenchmarkOptions opts;
  opts.reps = cfg.reps;
  opts.truth_reps = cfg.truth_reps > 0 ? cfg.truth_reps : cfg.reps;
  opts.seed = cfg.seed;
  opts.jobs = effective_jobs(cfg.jobs);
  opts.fit.fallback = FallbackPolicy::parse(cfg.fallback);

  std::vector<BenchmarkResult> results;
  bool exceeded = false;
  json runs = json::array();
  for (const auto& p : settings) {
    results.push_back(run_benchmark(p, opts, scenario_name(cfg.scenario)));
    const auto& r = results.back();
    exceeded = exceeded || r.failure_threshold_exceeded;
    std::cerr << fmt::format("sigma_kk={}: {} replicates, {} failed, {:.1f}s\n", r.sigma_label,
                             r.replicates.size(), r.failures, r.runtime_seconds);
    runs.push_back({{"sigma_kk", r.sigma_label},
                    {"parameters", params_json(p)},
                    {"failures", r.failures},
                    {"runtime_seconds", r.runtime_seconds}});
  }

  std::vector<Estimator> columns = all_estimators();
  if (!cfg.estimators.empty()) {
    columns.clear();
    for (const auto& name : split_list(cfg.estimators)) columns.push_back(parse_estimator(name));
  }
  const fs::path dir = prepare_out(cfg.out);
  std::ostringstream reps, summary, truth;
  write_replicates_csv(reps, results);
  write_summary_csv(summary, results);
  write_truth_csv(truth, results);
  write_text(dir / "replicates.csv", reps.str());
  write_text(dir / "summary.csv", summary.str());
  write_text(dir / "truth.csv", truth.str());
  const std::string table =
      fmt::format("Scenario {} (n = {}, {} replicates, truth from {} pooled replicates)\n\n",
                  scenario_name(cfg.scenario), base.n, opts.reps, opts.truth_reps) +
      format_table(results, columns);
  write_text(dir / "report.txt", table);
  std::cout << table;

  write_manifest(dir, {{"command", "benchmark"},
                       {"scenario", scenario_name(cfg.scenario)},
                       {"seed", cfg.seed},
                       {"reps", opts.reps},
                       {"truth_reps", opts.truth_reps},
                       {"jobs", opts.jobs},
                       {"fallback", opts.fit.fallback.str()},
                       {"seed_streams", {"truth/<r>", "replicate/<r>"}},
                       {"runs", runs}});
  if (exceeded) {
    std::cerr << "error: more than 5% of replicates failed\n";
    return kNumerical;
  }
  return kOk;
}

int cmd_report(const RunConfig& cfg) {
  if (cfg.summary.empty()) throw ConfigError("report needs --summary");
  std::ifstream in(cfg.summary);
  if (!in) throw DataError(fmt::format("cannot open {}", cfg.summary));
  std::vector<Estimator> columns = all_estimators();
  if (!cfg.estimators.empty()) {
    columns.clear();
    for (const auto& name : split_list(cfg.estimators)) columns.push_back(parse_estimator(name));
  }
  const std::string table = format_table_from_summary(in, columns);
  if (cfg.out != ".") {
    write_text(fs::path(cfg.out), table);
  }
  std::cout << table;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debiased ATT estimation with VAR(1) counterfactual covariates"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  RunConfig cfg;

  auto* sim = app.add_subcommand("simulate", "Simulate cohort panels");
  add_scenario_flags(sim, cfg.scenario);
  sim->add_option("--seed", cfg.seed, "Master seed");
  sim->add_option("--reps", cfg.reps, "Number of panels")->check(CLI::PositiveNumber);
  sim->add_option("--out", cfg.out, "Output directory");

  auto* var = app.add_subcommand("fit-var", "Fit the VAR(1) counterfactual model to a panel");
  var->add_option("--panel", cfg.panel, "Panel CSV")->required();
  var->add_option("--out", cfg.out, "Output directory");

  auto* est = app.add_subcommand("estimate", "Fit the additive-intensity estimators to a panel");
  est->add_option("--panel", cfg.panel, "Panel CSV")->required();
  est->add_option("--var-model", cfg.var_model, "Reuse a fitted VAR model file");
  est->add_option("--estimators", cfg.estimators,
                  "Comma list: oracle,naive,uncorrected,debiased,debiased_true");
  est->add_option("--fallback", cfg.fallback, "psd-floor | ridge:<lambda> | fail");
  est->add_option("--out", cfg.out, "Output directory");
  add_scenario_flags(est, cfg.scenario);

  auto* bench = app.add_subcommand("benchmark", "Monte-Carlo MISE comparison of the estimators");
  add_scenario_flags(bench, cfg.scenario);
  bench->add_option("--seed", cfg.seed, "Master seed");
  bench->add_option("--reps", cfg.reps, "Replicates per setting")->check(CLI::PositiveNumber);
  bench->add_option("--truth-reps", cfg.truth_reps, "Pooled replicates for the truth curve (default: --reps)");
  bench->add_option("--sigma-grid", cfg.sigma_grid, "Comma list of Sigma_kk values, one table row each");
  bench->add_option("--jobs", cfg.jobs, "Worker threads (default: all cores)");
  bench->add_option("--estimators", cfg.estimators, "Columns of the text table");
  bench->add_option("--fallback", cfg.fallback, "psd-floor | ridge:<lambda> | fail");
  bench->add_option("--out", cfg.out, "Output directory");

  auto* report = app.add_subcommand("report", "Render the text table from a benchmark summary CSV");
  report->add_option("--summary", cfg.summary, "summary.csv from benchmark")->required();
  report->add_option("--estimators", cfg.estimators, "Columns to show");
  report->add_option("--out", cfg.out, "Write the table to this file as well");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*sim) return cmd_simulate(cfg);
    if (*var) return cmd_fit_var(cfg);
    if (*est) return cmd_estimate(cfg);
    if (*bench) return cmd_benchmark(cfg);
    if (*report) return cmd_report(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
