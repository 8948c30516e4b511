#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <utility>
#include <vector>

#include "debiatt/linalg.hpp"
#include "debiatt/panel.hpp"

namespace debiatt {

/// VAR(1) with baseline-dependent intercept:
///   X(t_k) = intercept + z_loadings * Z + pi * X(t_{k-1}) + noise.
struct VarModel {
  Matrix pi;          // d_x x d_x
  Vector intercept;   // d_x
  Matrix z_loadings;  // d_x x d_z
  Matrix resid_cov;   // d_x x d_x
  int n_obs = 0;
  int dof = 0;

  int d_x() const { return static_cast<int>(pi.rows()); }
  int d_z() const { return static_cast<int>(z_loadings.cols()); }

  /// Subject-specific intercept b0 + B_Z z.
  Vector subject_intercept(const Vector& z) const { return intercept + z_loadings * z; }
};

struct DesignMatrix {
  Matrix design;   // rows (1, Z_i, X_i(t_{k-1}))
  Matrix targets;  // rows X_i(t_k)
  std::vector<std::pair<std::int64_t, int>> row_index;  // (subject id, k)
};

/// Last untreated grid index used for fitting: s - 1 for treated subjects,
/// the follow-up end otherwise.
int last_untreated_index(const SubjectRecord& s);

/// Stacks every untreated transition t_{k-1} -> t_k, k <= last_untreated_index.
/// Throws DataError if there is none.
DesignMatrix build_design_matrix(const PanelDataset& panel);

/// Multivariate least squares on the untreated transitions (column-pivoted
/// QR). Throws NumericalError on rank deficiency, DataError on too few rows.
VarModel fit_var(const PanelDataset& panel);
VarModel fit_var(const DesignMatrix& design, int d_z, int d_x);

/// X~(t_s) = b0_i + Pi X(t_{s-1}), then X~(t_{k+1}) = b0_i + Pi X~(t_k) up to
/// the follow-up end. Throws DataError for s == 0 or untreated subjects.
ForecastPath forecast_counterfactuals(const VarModel& model, const SubjectRecord& subject);

/// Forecasts for every treated subject; untreated entries are empty paths.
ForecastSet forecast_all(const VarModel& model, const PanelDataset& panel);

/// l-step forecast MSE matrices; `at(l)` for l = 1..max_horizon().
class ErrorCovariance {
 public:
  ErrorCovariance() = default;
  explicit ErrorCovariance(std::vector<Matrix> by_horizon) : by_horizon_(std::move(by_horizon)) {}

  const Matrix& at(int l) const { return by_horizon_.at(static_cast<std::size_t>(l - 1)); }
  int max_horizon() const { return static_cast<int>(by_horizon_.size()); }

 private:
  std::vector<Matrix> by_horizon_;
};

/// Sigma(l) = sum_{j<l} Pi^j Sigma Pi^j^T.
ErrorCovariance error_covariance(const Matrix& pi, const Matrix& sigma, int l_max);
inline ErrorCovariance error_covariance(const VarModel& model, int l_max) {
  return error_covariance(model.pi, model.resid_cov, l_max);
}

/// Plain-text layout:
///   var1 <d_x> <d_z> <n_obs> <dof>
///   intercept: 1 row of d_x values
///   pi: d_x rows of d_x values
///   z_loadings: d_x rows of d_z values (omitted when d_z == 0)
///   resid_cov: d_x rows of d_x values
void write_var_model(std::ostream& out, const VarModel& model);
void write_var_model(const std::filesystem::path& path, const VarModel& model);
VarModel read_var_model(std::istream& in);
VarModel read_var_model(const std::filesystem::path& path);

}  // namespace debiatt
