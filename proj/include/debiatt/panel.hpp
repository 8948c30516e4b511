#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "debiatt/linalg.hpp"

namespace debiatt {

/// Shared observation grid t_0 < t_1 < ... < t_K.
class TimeGrid {
 public:
  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> points);

  /// Unit-spaced grid 0, 1, ..., intervals.
  static TimeGrid unit(int intervals);

  int intervals() const { return static_cast<int>(points_.size()) - 1; }
  double t(int k) const { return points_[static_cast<std::size_t>(k)]; }
  double width(int k) const { return t(k + 1) - t(k); }
  const std::vector<double>& points() const { return points_; }

  bool operator==(const TimeGrid&) const = default;

 private:
  std::vector<double> points_;
};

/// One subject observed on grid points 0..follow_up_end.
///
/// Rows of `covariates` (and `true_counterfactuals` when present) are the
/// grid points 0..follow_up_end; `event_counts[k]` counts events in
/// (t_k, t_{k+1}] for k < follow_up_end.
struct SubjectRecord {
  std::int64_t id = 0;
  Vector baseline;                          // Z, length d_Z
  Matrix covariates;                        // X, (follow_up_end + 1) x d_X
  std::optional<int> treatment_start;       // s; absent = never treated
  std::vector<int> event_counts;            // dN, length follow_up_end
  int follow_up_end = 0;                    // tau_i as a grid index
  std::optional<Matrix> true_counterfactuals;  // X0, same shape as covariates

  bool treated_at(int k) const { return treatment_start && k >= *treatment_start; }
};

struct PanelDataset {
  TimeGrid grid;
  int d_z = 0;
  int d_x = 0;
  std::vector<SubjectRecord> subjects;

  int n() const { return static_cast<int>(subjects.size()); }
  int regressor_size() const { return 1 + d_z + d_x + 1; }
  int x_offset() const { return 1 + d_z; }
  int treatment_index() const { return 1 + d_z + d_x; }
  bool has_true_counterfactuals() const;
};

/// Counterfactual forecast for one treated subject: rows are grid points
/// start..start + values.rows() - 1, the forecast horizon at row r is r + 1.
struct ForecastPath {
  std::int64_t id = 0;
  int start = 0;
  Matrix values;

  int horizon(int k) const { return k - start + 1; }
};

/// Forecast paths aligned with `PanelDataset::subjects`; entries for
/// never-treated subjects are empty (zero rows).
using ForecastSet = std::vector<ForecastPath>;

/// Selects which process fills the X block of the regressor after treatment.
class CovariateSource {
 public:
  enum class Kind { Observed, TrueCounterfactual, ForecastCounterfactual };

  static CovariateSource observed() { return CovariateSource(Kind::Observed, nullptr); }
  static CovariateSource true_counterfactual() {
    return CovariateSource(Kind::TrueCounterfactual, nullptr);
  }
  static CovariateSource forecast(std::shared_ptr<const ForecastSet> forecasts) {
    return CovariateSource(Kind::ForecastCounterfactual, std::move(forecasts));
  }

  Kind kind() const { return kind_; }
  const ForecastSet* forecasts() const { return forecasts_.get(); }

 private:
  CovariateSource(Kind kind, std::shared_ptr<const ForecastSet> forecasts)
      : kind_(kind), forecasts_(std::move(forecasts)) {}

  Kind kind_;
  std::shared_ptr<const ForecastSet> forecasts_;
};

struct RegressorVector {
  Vector values;  // (1, Z, X-block, D)
  int x_block_offset = 0;
};

/// Regressor W_i(t_k) for subject `subject_index` of `panel`.
/// Throws DataError when the requested counterfactual value is absent.
RegressorVector assemble_regressor(const PanelDataset& panel, int subject_index, int k,
                                   const CovariateSource& source);

/// Allocation-free variant used by the estimators; `out` must have size p.
void fill_regressor(const PanelDataset& panel, int subject_index, int k,
                    const CovariateSource& source, Eigen::Ref<Vector> out);

struct ValidationIssue {
  std::int64_t subject_id = 0;
  std::optional<int> t_index;
  std::string column;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool ok() const { return issues.empty(); }
  std::string summary(std::size_t max_items = 10) const;
};

ValidationReport validate_panel(const PanelDataset& panel);

/// Column names of the panel CSV; Z/X/X0 columns are prefix + 1-based index.
struct PanelSchema {
  std::string id = "id";
  std::string t_index = "t_index";
  std::string treatment = "D";
  std::string events = "dN";
  std::string z_prefix = "Z";
  std::string x_prefix = "X";
  std::string x0_prefix = "X0_";
};

/// Reads a panel CSV; throws DataError on malformed input or when the
/// loaded panel fails validation. Grid defaults to unit spacing.
PanelDataset load_panel(const std::filesystem::path& path, const PanelSchema& schema = {},
                        std::optional<TimeGrid> grid = std::nullopt);
PanelDataset read_panel(std::istream& in, const PanelSchema& schema = {},
                        std::optional<TimeGrid> grid = std::nullopt);

void write_panel(const std::filesystem::path& path, const PanelDataset& panel,
                 const PanelSchema& schema = {});
void write_panel(std::ostream& out, const PanelDataset& panel, const PanelSchema& schema = {});

}  // namespace debiatt
