#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "debiatt/additive.hpp"
#include "debiatt/linalg.hpp"
#include "debiatt/panel.hpp"
#include "debiatt/sim.hpp"

namespace debiatt {

/// Monte-Carlo reference ATT path d^MC(t_k); NaN where no pooled subject is
/// treated at t_k.
struct TruthCurve {
  TimeGrid grid;
  Vector att;
  int reps = 0;
  std::vector<std::uint64_t> seeds;
};

/// Concatenates panels sharing dimensions and grid; subject ids are renumbered 1..N.
PanelDataset pool_panels(const std::vector<PanelDataset>& panels);

/// Simulates one cohort per seed, pools them and fits the oracle estimator.
TruthCurve monte_carlo_truth(const SimParams& params, const std::vector<std::uint64_t>& seeds,
                             const FitOptions& options = {});

/// sum_k (curve_k - truth_k)^2 * width_k over intervals where the truth is
/// defined. Throws DataError on a grid mismatch or a missing estimate.
double mise(const Vector& curve, const TruthCurve& truth);
double mise(const Vector& curve, const Vector& truth, const TimeGrid& grid);

struct WilcoxonResult {
  double statistic = 0.0;  // V: sum of ranks of positive differences a - b
  double p_value = 1.0;
  double z = 0.0;
  int n_used = 0;          // nonzero differences
  bool degenerate = false;
};

/// Two-sided paired signed-rank test, normal approximation with tie
/// correction and continuity correction; zero differences are dropped.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    bool continuity = true);
/// Same statistic with the exact conditional null distribution (mid-ranks
/// kept), computed by dynamic programming over sign assignments.
WilcoxonResult wilcoxon_signed_rank_exact(std::span<const double> a, std::span<const double> b);

struct BenchmarkOptions {
  int reps = 100;
  int truth_reps = 100;
  std::uint64_t seed = 1;
  int jobs = 1;
  FitOptions fit;
  double max_failure_fraction = 0.05;
};

struct ReplicateOutcome {
  int index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::array<double, 5> mise{};  // ordered as all_estimators()
  int fallback_intervals = 0;
};

struct EstimatorSummary {
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;
};

struct BenchmarkResult {
  std::string scenario;
  std::string sigma_label;
  TruthCurve truth;
  std::vector<ReplicateOutcome> replicates;
  std::map<Estimator, EstimatorSummary> summary;
  /// debiased vs each other estimator, paired over successful replicates.
  std::map<Estimator, WilcoxonResult> tests;
  int failures = 0;
  bool failure_threshold_exceeded = false;
  double runtime_seconds = 0.0;

  std::vector<double> mise_of(Estimator e) const;
};

/// Runs one scenario: a truth curve from the "truth" seed block, then reps
/// replicates (seed block "replicate") each scored with all five estimators.
BenchmarkResult run_benchmark(const SimParams& params, const BenchmarkOptions& options,
                              const std::string& scenario = "custom");

/// Sigma(l) implied by the generator: Pi = diag(kappa_d0), Sigma = params.sigma.
ErrorCovariance generator_error_covariance(const SimParams& params, int l_max);

/// Scores a single simulated panel against a truth curve.
ReplicateOutcome score_replicate(const PanelDataset& panel, const SimParams& params,
                                 const TruthCurve& truth, const FitOptions& options);

std::string sigma_label(const SimParams& params);

/// `sigma_kk,replicate,seed,status,oracle,naive,uncorrected,debiased,debiased_true`
void write_replicates_csv(std::ostream& out, const std::vector<BenchmarkResult>& results);
/// `sigma_kk,estimator,mean,sd,n,statistic,p_value_vs_debiased,significant`
void write_summary_csv(std::ostream& out, const std::vector<BenchmarkResult>& results);
/// `sigma_kk,t_index,t,att_truth`
void write_truth_csv(std::ostream& out, const std::vector<BenchmarkResult>& results);
/// Rows = Sigma_kk settings, columns = estimators, cells "mean +/- sd";
/// `*` marks p < 0.05 against the debiased estimator.
std::string format_table(const std::vector<BenchmarkResult>& results,
                         const std::vector<Estimator>& columns = all_estimators());

/// Rebuilds the text table from a summary CSV written by write_summary_csv.
std::string format_table_from_summary(std::istream& summary_csv,
                                      const std::vector<Estimator>& columns = all_estimators());

}  // namespace debiatt
