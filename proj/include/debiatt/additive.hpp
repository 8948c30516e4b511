#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "debiatt/linalg.hpp"
#include "debiatt/panel.hpp"
#include "debiatt/var_model.hpp"

namespace debiatt {

enum class Estimator { Oracle, Naive, Uncorrected, Debiased, DebiasedTrue };

std::string to_string(Estimator e);
Estimator parse_estimator(const std::string& name);
const std::vector<Estimator>& all_estimators();

/// What fit_debiased does when the corrected Gram matrix is not positive
/// definite at an interval.
struct FallbackPolicy {
  enum class Kind { PsdFloor, Ridge, Fail };
  Kind kind = Kind::PsdFloor;
  double ridge = 0.0;

  /// "psd-floor", "ridge:<lambda>" or "fail".
  static FallbackPolicy parse(const std::string& text);
  std::string str() const;
};

struct FitOptions {
  double ridge = 0.0;  // added to every uncorrected solve
  FallbackPolicy fallback;
};

/// Piecewise-constant coefficient paths A(t_k) = (alpha_0, alpha_Z, alpha_X, alpha_D)
/// on the K grid intervals. Coefficients whose regressor column is identically
/// zero over the risk set (alpha_D before anyone is treated, everything after
/// all subjects exit) are NaN.
struct CoefficientPaths {
  TimeGrid grid;
  int d_z = 0;
  int d_x = 0;
  std::string label;
  Matrix coef;  // K x p
  std::vector<int> risk_set_size;
  std::vector<int> treated_count;
  std::vector<bool> fallback;

  int intervals() const { return static_cast<int>(coef.rows()); }
  int p() const { return static_cast<int>(coef.cols()); }
  std::vector<std::string> names() const;
  /// alpha_D path: the ATT estimate per interval.
  Vector att() const { return coef.col(p() - 1); }
  /// B(t_k) = sum_{j<k} A(t_j) * width_j for k = 0..K; NaN entries contribute 0.
  Matrix cumulative() const;
  /// Width-weighted time average of each coefficient over its estimable intervals.
  Vector time_averaged() const;
};

/// Argmin of A' gram A * delta - 2 A' moment, i.e. (gram * delta + ridge I) A = moment.
/// Throws NumericalError when the system is singular and ridge == 0.
Vector solve_interval(const Matrix& gram, const Vector& moment, double delta, double ridge = 0.0);

/// Per-interval Gram matrices and moment vectors for a covariate source.
struct IntervalSystems {
  std::vector<Matrix> gram;
  std::vector<Vector> moment;
  std::vector<int> risk_set_size;
  std::vector<int> treated_count;
};
IntervalSystems accumulate_systems(const PanelDataset& panel, const CovariateSource& source);

/// Sum over treated person-time at each interval of the padded error
/// covariance (Sigma(l) in the X block, zero elsewhere).
std::vector<Matrix> bias_pads(const PanelDataset& panel, const ErrorCovariance& errors);

/// Naive (Observed), oracle (TrueCounterfactual) or uncorrected (ForecastCounterfactual).
CoefficientPaths fit(const PanelDataset& panel, const CovariateSource& source,
                     const FitOptions& options = {});

/// Debiased estimator: forecast-source Gram minus the summed bias pads.
CoefficientPaths fit_debiased(const PanelDataset& panel,
                              std::shared_ptr<const ForecastSet> forecasts,
                              const ErrorCovariance& errors, const FitOptions& options = {});
CoefficientPaths fit_debiased(const PanelDataset& panel, const VarModel& model,
                              const FitOptions& options = {});

/// r_n(A) (or R~_n(A) with a forecast source): (1/n) sum_i sum_{k<tau_i}
/// [A'W W'A * width_k - 2 A'W dN_i(k)]. NaN coefficients count as zero.
double empirical_risk(const PanelDataset& panel, const Matrix& coef, const CovariateSource& source);

/// (1/n) sum over treated person-time of alpha_X' Sigma(l) alpha_X * width_k.
double bias_term(const PanelDataset& panel, const Matrix& coef, const ErrorCovariance& errors);

/// R^_n(A) = R~_n(A) + bias(A).
double debiased_risk(const PanelDataset& panel, const Matrix& coef,
                     std::shared_ptr<const ForecastSet> forecasts, const ErrorCovariance& errors);

/// `t_index,t,estimator,coef_name,value,cumulative,flag_fallback` with rows
/// for grid points 0..K (value is NA on the closing grid point).
void write_coefficients_csv(std::ostream& out, const CoefficientPaths& paths, bool header = true);
/// Wide table `t_index,t,<name>...` of cumulative curves on grid points 0..K.
void write_cumulative_csv(std::ostream& out, const CoefficientPaths& paths);

}  // namespace debiatt
