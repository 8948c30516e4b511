#include "debiatt/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "debiatt/error.hpp"
#include "debiatt/var_model.hpp"

namespace debiatt {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t estimator_slot(Estimator e) {
  const auto& all = all_estimators();
  return static_cast<std::size_t>(std::find(all.begin(), all.end(), e) - all.begin());
}
}  // namespace

PanelDataset pool_panels(const std::vector<PanelDataset>& panels) {
  if (panels.empty()) throw DataError("nothing to pool");
  PanelDataset out;
  out.grid = panels.front().grid;
  out.d_z = panels.front().d_z;
  out.d_x = panels.front().d_x;
  std::size_t total = 0;
  for (const auto& p : panels) total += p.subjects.size();
  out.subjects.reserve(total);
  std::int64_t next_id = 1;
  for (const auto& p : panels) {
    if (p.d_z != out.d_z || p.d_x != out.d_x || !(p.grid == out.grid)) {
      throw DataError("cannot pool panels with different dimensions or grids");
    }
    for (const auto& s : p.subjects) {
      out.subjects.push_back(s);
      out.subjects.back().id = next_id++;
    }
  }
  return out;
}

TruthCurve monte_carlo_truth(const SimParams& params, const std::vector<std::uint64_t>& seeds,
                             const FitOptions& options) {
  if (seeds.empty()) throw ConfigError("monte_carlo_truth needs at least one replicate");
  std::vector<PanelDataset> panels;
  panels.reserve(seeds.size());
  for (const auto seed : seeds) {
    Rng rng(seed);
    panels.push_back(simulate_cohort(params, rng));
  }
  const PanelDataset pooled = pool_panels(panels);
  const CoefficientPaths oracle = fit(pooled, CovariateSource::true_counterfactual(), options);
  TruthCurve truth;
  truth.grid = pooled.grid;
  truth.att = oracle.att();
  truth.reps = static_cast<int>(seeds.size());
  truth.seeds = seeds;
  return truth;
}

double mise(const Vector& curve, const Vector& truth, const TimeGrid& grid) {
  if (curve.size() != truth.size() || truth.size() != grid.intervals()) {
    throw DataError(fmt::format("MISE grid mismatch: curve {} / truth {} / grid {} intervals",
                                curve.size(), truth.size(), grid.intervals()));
  }
  double total = 0.0;
  for (Eigen::Index k = 0; k < truth.size(); ++k) {
    if (std::isnan(truth(k))) continue;
    if (std::isnan(curve(k))) {
      throw DataError(fmt::format("MISE: estimate undefined at interval {} where the truth is defined",
                                  k));
    }
    const double d = curve(k) - truth(k);
    total += d * d * grid.width(static_cast<int>(k));
  }
  return total;
}

double mise(const Vector& curve, const TruthCurve& truth) { return mise(curve, truth.att, truth.grid); }

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank
// ---------------------------------------------------------------------------

namespace {

struct SignedRanks {
  std::vector<double> ranks;  // mid-ranks of |d|, nonzero d only
  std::vector<bool> positive;
  double tie_term = 0.0;      // sum over tie groups of t^3 - t
};

SignedRanks signed_ranks(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("wilcoxon: samples must be paired (equal length)");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    if (std::isnan(diff)) throw DataError("wilcoxon: NaN in paired samples");
    if (diff != 0.0) d.push_back(diff);
  }
  SignedRanks out;
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  out.ranks.assign(n, 0.0);
  out.positive.assign(n, false);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    const double t = static_cast<double>(j - i + 1);
    out.tie_term += t * t * t - t;
    for (std::size_t q = i; q <= j; ++q) out.ranks[order[q]] = mid;
    i = j + 1;
  }
  for (std::size_t i = 0; i < n; ++i) out.positive[i] = d[i] > 0;
  return out;
}

double positive_rank_sum(const SignedRanks& sr) {
  double v = 0.0;
  for (std::size_t i = 0; i < sr.ranks.size(); ++i) {
    if (sr.positive[i]) v += sr.ranks[i];
  }
  return v;
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    bool continuity) {
  const SignedRanks sr = signed_ranks(a, b);
  WilcoxonResult r;
  r.n_used = static_cast<int>(sr.ranks.size());
  r.statistic = positive_rank_sum(sr);
  if (r.n_used == 0) {
    r.degenerate = true;
    r.p_value = 1.0;
    return r;
  }
  const double n = r.n_used;
  const double mean = n * (n + 1) / 4.0;
  const double var = n * (n + 1) * (2 * n + 1) / 24.0 - sr.tie_term / 48.0;
  if (!(var > 0)) {
    r.degenerate = true;
    r.p_value = 1.0;
    return r;
  }
  double diff = r.statistic - mean;
  if (continuity && diff != 0.0) diff -= std::copysign(0.5, diff);
  r.z = diff / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(std::abs(r.z) / std::sqrt(2.0)));
  return r;
}

WilcoxonResult wilcoxon_signed_rank_exact(std::span<const double> a, std::span<const double> b) {
  const SignedRanks sr = signed_ranks(a, b);
  WilcoxonResult r;
  r.n_used = static_cast<int>(sr.ranks.size());
  r.statistic = positive_rank_sum(sr);
  if (r.n_used == 0) {
    r.degenerate = true;
    return r;
  }
  if (r.n_used > 60) throw DataError("exact Wilcoxon limited to 60 nonzero differences");
  // doubled mid-ranks are integers; count sign assignments per doubled sum
  std::vector<int> w(sr.ranks.size());
  int total = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = static_cast<int>(std::lround(2.0 * sr.ranks[i]));
    total += w[i];
  }
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  int reach = 0;
  for (int wi : w) {
    for (int s = reach; s >= 0; --s) {
      if (count[static_cast<std::size_t>(s)] != 0.0) {
        count[static_cast<std::size_t>(s + wi)] += count[static_cast<std::size_t>(s)];
      }
    }
    reach += wi;
  }
  const int observed = static_cast<int>(std::lround(2.0 * r.statistic));
  const double all = std::ldexp(1.0, r.n_used);
  double lower = 0.0, upper = 0.0;
  for (int s = 0; s <= total; ++s) {
    if (s <= observed) lower += count[static_cast<std::size_t>(s)];
    if (s >= observed) upper += count[static_cast<std::size_t>(s)];
  }
  r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
  return r;
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

ErrorCovariance generator_error_covariance(const SimParams& params, int l_max) {
  const Matrix pi = params.kappa_d0.asDiagonal();
  return error_covariance(pi, params.sigma, l_max);
}

std::string sigma_label(const SimParams& params) {
  const Matrix& s = params.sigma;
  const double d = s(0, 0);
  const bool scalar = (s - d * Matrix::Identity(s.rows(), s.cols())).cwiseAbs().maxCoeff() == 0.0;
  return scalar ? fmt::format("{}", d) : "custom";
}

ReplicateOutcome score_replicate(const PanelDataset& panel, const SimParams& params,
                                 const TruthCurve& truth, const FitOptions& options) {
  ReplicateOutcome out;
  const int big_k = panel.grid.intervals();
  const auto oracle = fit(panel, CovariateSource::true_counterfactual(), options);
  const auto naive = fit(panel, CovariateSource::observed(), options);
  const VarModel model = fit_var(panel);
  auto forecasts = std::make_shared<const ForecastSet>(forecast_all(model, panel));
  const auto uncorrected = fit(panel, CovariateSource::forecast(forecasts), options);
  const auto debiased = fit_debiased(panel, forecasts, error_covariance(model, big_k), options);
  const auto debiased_true =
      fit_debiased(panel, forecasts, generator_error_covariance(params, big_k), options);

  out.mise[estimator_slot(Estimator::Oracle)] = mise(oracle.att(), truth);
  out.mise[estimator_slot(Estimator::Naive)] = mise(naive.att(), truth);
  out.mise[estimator_slot(Estimator::Uncorrected)] = mise(uncorrected.att(), truth);
  out.mise[estimator_slot(Estimator::Debiased)] = mise(debiased.att(), truth);
  out.mise[estimator_slot(Estimator::DebiasedTrue)] = mise(debiased_true.att(), truth);
  out.fallback_intervals = static_cast<int>(
      std::count(debiased.fallback.begin(), debiased.fallback.end(), true) +
      std::count(debiased_true.fallback.begin(), debiased_true.fallback.end(), true));
  out.ok = true;
  return out;
}

std::vector<double> BenchmarkResult::mise_of(Estimator e) const {
  std::vector<double> out;
  for (const auto& r : replicates) {
    if (r.ok) out.push_back(r.mise[estimator_slot(e)]);
  }
  return out;
}

namespace {

template <class Fn>
void parallel_for(int count, int jobs, Fn&& body) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(jobs));
  for (int j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

BenchmarkResult run_benchmark(const SimParams& params, const BenchmarkOptions& options,
                              const std::string& scenario) {
  params.validate();
  if (options.reps < 1 || options.truth_reps < 1) throw ConfigError("reps must be >= 1");
  const auto started = std::chrono::steady_clock::now();

  BenchmarkResult result;
  result.scenario = scenario;
  result.sigma_label = sigma_label(params);

  // truth: dedicated seed block, cohorts simulated in parallel then pooled in index order
  {
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(options.truth_reps));
    for (int r = 0; r < options.truth_reps; ++r) {
      seeds[static_cast<std::size_t>(r)] = derive_seed(options.seed, "truth", static_cast<std::uint64_t>(r));
    }
    std::vector<PanelDataset> panels(seeds.size());
    parallel_for(options.truth_reps, options.jobs, [&](int r) {
      Rng rng(seeds[static_cast<std::size_t>(r)]);
      panels[static_cast<std::size_t>(r)] = simulate_cohort(params, rng);
    });
    const PanelDataset pooled = pool_panels(panels);
    panels.clear();
    const auto oracle = fit(pooled, CovariateSource::true_counterfactual(), options.fit);
    result.truth.grid = pooled.grid;
    result.truth.att = oracle.att();
    result.truth.reps = options.truth_reps;
    result.truth.seeds = std::move(seeds);
  }

  result.replicates.resize(static_cast<std::size_t>(options.reps));
  parallel_for(options.reps, options.jobs, [&](int r) {
    ReplicateOutcome& out = result.replicates[static_cast<std::size_t>(r)];
    const std::uint64_t seed = derive_seed(options.seed, "replicate", static_cast<std::uint64_t>(r));
    try {
      Rng rng(seed);
      const PanelDataset panel = simulate_cohort(params, rng);
      out = score_replicate(panel, params, result.truth, options.fit);
    } catch (const std::exception& e) {
      out = ReplicateOutcome{};
      out.ok = false;
      out.error = e.what();
      out.mise.fill(kNaN);
    }
    out.index = r;
    out.seed = seed;
  });

  for (const auto& r : result.replicates) result.failures += r.ok ? 0 : 1;
  result.failure_threshold_exceeded =
      static_cast<double>(result.failures) >= options.max_failure_fraction * options.reps &&
      result.failures > 0;

  for (Estimator e : all_estimators()) {
    const auto v = result.mise_of(e);
    EstimatorSummary s;
    s.n = static_cast<int>(v.size());
    if (s.n > 0) {
      s.mean = std::accumulate(v.begin(), v.end(), 0.0) / s.n;
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.sd = s.n > 1 ? std::sqrt(ss / (s.n - 1)) : 0.0;
    } else {
      s.mean = s.sd = kNaN;
    }
    result.summary[e] = s;
  }
  const auto reference = result.mise_of(Estimator::Debiased);
  if (!reference.empty()) {
    for (Estimator e : all_estimators()) {
      if (e == Estimator::Debiased) continue;
      const auto other = result.mise_of(e);
      result.tests[e] = wilcoxon_signed_rank(reference, other);
    }
  }
  result.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

std::string num(double v) { return std::isnan(v) ? "NA" : fmt::format("{}", v); }

struct TableCell {
  double mean = kNaN;
  double sd = kNaN;
  bool significant = false;
};

struct TableRow {
  std::string label;
  std::map<Estimator, TableCell> cells;
};

std::string render(const std::vector<TableRow>& rows, const std::vector<Estimator>& columns) {
  std::vector<std::string> header{"Sigma_kk"};
  for (Estimator e : columns) header.push_back(to_string(e));
  std::vector<std::vector<std::string>> body;
  for (const auto& row : rows) {
    std::vector<std::string> line{row.label};
    for (Estimator e : columns) {
      auto it = row.cells.find(e);
      if (it == row.cells.end() || std::isnan(it->second.mean)) {
        line.push_back("NA");
        continue;
      }
      line.push_back(fmt::format("{:.3f}{} ± {:.3f}", it->second.mean,
                                 it->second.significant ? "*" : "", it->second.sd));
    }
    body.push_back(std::move(line));
  }
  // column widths measured in code points so the ± sign aligns
  auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) {
      return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
    }));
  };
  std::vector<std::size_t> w(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    w[c] = width(header[c]);
    for (const auto& line : body) w[c] = std::max(w[c], width(line[c]));
  }
  auto emit = [&](const std::vector<std::string>& line) {
    std::string out;
    for (std::size_t c = 0; c < line.size(); ++c) {
      out += (c ? " | " : "") + line[c] + std::string(w[c] - width(line[c]), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = emit(header);
  std::size_t total = 0;
  for (auto x : w) total += x;
  out += std::string(total + 3 * (w.size() - 1), '-') + "\n";
  for (const auto& line : body) out += emit(line);
  out += "Cells: mean MISE ± SD over replicates; * = Wilcoxon signed-rank p < 0.05 vs debiased.\n";
  return out;
}

}  // namespace

void write_replicates_csv(std::ostream& out, const std::vector<BenchmarkResult>& results) {
  out << "sigma_kk,replicate,seed,status";
  for (Estimator e : all_estimators()) out << ',' << to_string(e);
  out << '\n';
  for (const auto& res : results) {
    for (const auto& r : res.replicates) {
      out << fmt::format("{},{},{},{}", res.sigma_label, r.index, r.seed, r.ok ? "ok" : "failed");
      for (double v : r.mise) out << ',' << num(v);
      out << '\n';
    }
  }
}

void write_summary_csv(std::ostream& out, const std::vector<BenchmarkResult>& results) {
  out << "sigma_kk,estimator,mean,sd,n,statistic,p_value_vs_debiased,significant\n";
  for (const auto& res : results) {
    for (Estimator e : all_estimators()) {
      const auto& s = res.summary.at(e);
      auto it = res.tests.find(e);
      const bool has_test = it != res.tests.end();
      out << fmt::format("{},{},{},{},{},{},{},{}\n", res.sigma_label, to_string(e), num(s.mean),
                         num(s.sd), s.n, has_test ? num(it->second.statistic) : "NA",
                         has_test ? num(it->second.p_value) : "NA",
                         has_test && it->second.p_value < 0.05 ? 1 : 0);
    }
  }
}

void write_truth_csv(std::ostream& out, const std::vector<BenchmarkResult>& results) {
  out << "sigma_kk,t_index,t,att_truth\n";
  for (const auto& res : results) {
    for (Eigen::Index k = 0; k < res.truth.att.size(); ++k) {
      out << fmt::format("{},{},{},{}\n", res.sigma_label, k, res.truth.grid.t(static_cast<int>(k)),
                         num(res.truth.att(k)));
    }
  }
}

std::string format_table(const std::vector<BenchmarkResult>& results,
                         const std::vector<Estimator>& columns) {
  std::vector<TableRow> rows;
  for (const auto& res : results) {
    TableRow row{res.sigma_label, {}};
    for (Estimator e : all_estimators()) {
      TableCell cell;
      cell.mean = res.summary.at(e).mean;
      cell.sd = res.summary.at(e).sd;
      auto it = res.tests.find(e);
      cell.significant = it != res.tests.end() && it->second.p_value < 0.05;
      row.cells[e] = cell;
    }
    rows.push_back(std::move(row));
  }
  return render(rows, columns);
}

std::string format_table_from_summary(std::istream& in, const std::vector<Estimator>& columns) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("sigma_kk,estimator,mean,sd", 0) != 0) {
    throw DataError("not a benchmark summary CSV (unexpected header)");
  }
  std::vector<TableRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 8) throw DataError(fmt::format("summary CSV line {}: expected 8 fields", line_no));
    auto parse = [&](const std::string& s) {
      if (s == "NA") return kNaN;
      try {
        return std::stod(s);
      } catch (const std::exception&) {
        throw DataError(fmt::format("summary CSV line {}: bad number '{}'", line_no, s));
      }
    };
    if (rows.empty() || rows.back().label != f[0]) rows.push_back(TableRow{f[0], {}});
    TableCell cell{parse(f[2]), parse(f[3]), f[7] == "1"};
    rows.back().cells[parse_estimator(f[1])] = cell;
  }
  return render(rows, columns);
}

}  // namespace debiatt
