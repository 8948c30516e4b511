#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "debiatt/linalg.hpp"
#include "debiatt/panel.hpp"
#include "debiatt/rng.hpp"

namespace debiatt {

/// How a treated subject's counterfactual path advances.
enum class CounterfactualRecursion {
  Counterfactual,  // X0(t+1) = kappa_d0 * X0(t) + e'
  Observed,        // X0(t+1) = kappa_d0 * X(t) + e'
};

/// Parameters of the cohort generator. Vector-valued fields have length d_x
/// (kappa_d0 and kappa_d1 act as diagonal matrices).
struct SimParams {
  int d_x = 1;
  int horizon = 11;
  Vector min_x;
  Vector max_x;
  Vector kappa_d0;
  Vector kappa_d1;
  Matrix sigma;  // noise covariance, d_x x d_x
  Vector lambda;
  double m = 1.5;
  double delta = -0.01;
  double delta0 = 30.0;
  Vector delta_z;  // length 3
  Vector delta_x;
  double min_z1 = -20.0;
  double max_z1 = -10.0;
  double p_z2 = 0.5;
  double lambda_z3 = 0.1;
  double treated_target = 31.622776601683793;  // sqrt(1000), treated mean-reversion level
  CounterfactualRecursion recursion = CounterfactualRecursion::Counterfactual;
  int n = 1000;
  std::uint64_t seed = 1;

  static constexpr int kDz = 3;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
};

/// Named presets "paper-1cov", "paper-3cov", "paper-6cov"; sigma defaults to 0.4 * I.
SimParams preset(const std::string& name);
std::vector<std::string> preset_names();

/// Applies one `key=value` override; unknown keys throw ConfigError.
/// Scalars broadcast to every coordinate of vector-valued keys; `sigma=v`
/// sets the noise covariance to v * I.
void apply_override(SimParams& params, const std::string& key, const std::string& value);

/// Flat key-value scenario text: `key = value` per line, `#` comments,
/// optional `preset = name` line applied first.
SimParams parse_scenario(const std::string& text);
SimParams load_scenario(const std::string& path);

/// Every effective parameter as key -> text, in override syntax.
std::map<std::string, std::string> describe(const SimParams& params);

/// Intensity delta*D + delta0 + delta_z.Z + delta_x.X, constant on an interval.
struct IntensitySpec {
  double delta = 0.0;
  double delta0 = 0.0;
  Vector delta_z;
  Vector delta_x;
  double treated = 0.0;
  Vector z;
  Vector x;

  double raw() const;
  /// Clamped at zero; this is the rate handed to the Poisson sampler.
  double operator()(double /*t*/) const { return std::max(raw(), 0.0); }
};

inline constexpr int kMaxEventsPerInterval = 1'000'000;

/// Thinning sampler for a non-homogeneous Poisson process on (a, b] under the
/// dominating rate `bound`. Accepted event times are appended to `times` when
/// non-null. Throws NumericalError if the intensity exceeds `bound` at a
/// proposed point or more than kMaxEventsPerInterval events are accepted.
int thinning_sample(const std::function<double(double)>& intensity, double a, double b,
                    double bound, Rng& rng, std::vector<double>* times = nullptr);

Vector draw_baseline(const SimParams& params, Rng& rng);

struct CovariateStep {
  Vector x_next;
  Vector x0_next;
};

/// Pre-factored noise for repeated covariate steps.
class NoiseModel {
 public:
  explicit NoiseModel(const Matrix& sigma);
  Vector draw(Rng& rng) const;
  int dim() const { return static_cast<int>(factor_.rows()); }

 private:
  Matrix factor_;
};

/// One covariate transition. `x0` is the current counterfactual state (used
/// only when treated); untreated subjects share one noise draw between the
/// observed and counterfactual paths.
CovariateStep step_covariates(const Vector& x, const Vector& x0, bool treated,
                              const SimParams& params, const NoiseModel& noise, Rng& rng);

double treatment_probability(const Vector& x, const SimParams& params);
bool draw_treatment(const Vector& x, const SimParams& params, Rng& rng);

/// Simulates params.n subjects on the unit grid 0..horizon with true
/// counterfactuals, seeded from params.seed.
PanelDataset simulate_cohort(const SimParams& params);
PanelDataset simulate_cohort(const SimParams& params, Rng& rng);

}  // namespace debiatt
