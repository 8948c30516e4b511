#include "debiatt/additive.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "debiatt/error.hpp"

namespace debiatt {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::Oracle: return "oracle";
    case Estimator::Naive: return "naive";
    case Estimator::Uncorrected: return "uncorrected";
    case Estimator::Debiased: return "debiased";
    case Estimator::DebiasedTrue: return "debiased_true";
  }
  return "?";
}

Estimator parse_estimator(const std::string& name) {
  for (Estimator e : all_estimators()) {
    if (to_string(e) == name) return e;
  }
  throw ConfigError(fmt::format(
      "unknown estimator '{}' (known: oracle, naive, uncorrected, debiased, debiased_true)", name));
}

const std::vector<Estimator>& all_estimators() {
  static const std::vector<Estimator> all{Estimator::Oracle, Estimator::Naive,
                                          Estimator::Uncorrected, Estimator::Debiased,
                                          Estimator::DebiasedTrue};
  return all;
}

FallbackPolicy FallbackPolicy::parse(const std::string& text) {
  FallbackPolicy p;
  if (text == "psd-floor") return p;
  if (text == "fail") {
    p.kind = Kind::Fail;
    return p;
  }
  if (text.rfind("ridge:", 0) == 0) {
    p.kind = Kind::Ridge;
    try {
      std::size_t used = 0;
      p.ridge = std::stod(text.substr(6), &used);
      if (used != text.size() - 6) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("bad ridge value in fallback '{}'", text));
    }
    if (!(p.ridge > 0)) throw ConfigError("ridge fallback needs a positive lambda");
    return p;
  }
  throw ConfigError(fmt::format("unknown fallback '{}' (psd-floor, ridge:<lambda>, fail)", text));
}

std::string FallbackPolicy::str() const {
  switch (kind) {
    case Kind::PsdFloor: return "psd-floor";
    case Kind::Ridge: return fmt::format("ridge:{}", ridge);
    case Kind::Fail: return "fail";
  }
  return "?";
}

std::vector<std::string> CoefficientPaths::names() const {
  std::vector<std::string> out{"intercept"};
  for (int j = 1; j <= d_z; ++j) out.push_back(fmt::format("Z{}", j));
  for (int j = 1; j <= d_x; ++j) out.push_back(fmt::format("X{}", j));
  out.push_back("D");
  return out;
}

Matrix CoefficientPaths::cumulative() const {
  Matrix out = Matrix::Zero(intervals() + 1, p());
  for (int k = 0; k < intervals(); ++k) {
    for (int c = 0; c < p(); ++c) {
      const double a = coef(k, c);
      out(k + 1, c) = out(k, c) + (std::isnan(a) ? 0.0 : a * grid.width(k));
    }
  }
  return out;
}

Vector CoefficientPaths::time_averaged() const {
  Vector out(p());
  for (int c = 0; c < p(); ++c) {
    double num = 0.0, den = 0.0;
    for (int k = 0; k < intervals(); ++k) {
      if (std::isnan(coef(k, c))) continue;
      num += coef(k, c) * grid.width(k);
      den += grid.width(k);
    }
    out(c) = den > 0 ? num / den : kNaN;
  }
  return out;
}

Vector solve_interval(const Matrix& gram, const Vector& moment, double delta, double ridge) {
  if (gram.rows() != gram.cols() || gram.rows() != moment.size()) {
    throw NumericalError("solve_interval: dimension mismatch");
  }
  if (!(delta > 0)) throw NumericalError("solve_interval: interval width must be positive");
  if (!is_symmetric(gram, 1e-10)) throw NumericalError("solve_interval: gram is not symmetric");
  Matrix system = gram * delta;
  system.diagonal().array() += ridge;
  system = 0.5 * (system + system.transpose());
  // Judge and solve the diagonally equilibrated system so that columns on
  // very different scales (or decaying towards zero) are not mistaken for
  // collinear ones.
  const Vector d = system.diagonal();
  if (!(d.minCoeff() > 0.0)) {
    throw NumericalError(fmt::format(
        "singular interval system (non-positive diagonal {:.3g}, condition estimate inf)",
        d.minCoeff()));
  }
  const Vector scale = d.cwiseSqrt().cwiseInverse();
  const Matrix equil = scale.asDiagonal() * system * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> es(equil);
  const Vector& ev = es.eigenvalues();
  const double max_ev = ev.cwiseAbs().maxCoeff();
  const double min_ev = ev.minCoeff();
  if (!(min_ev > 1e-12 * max_ev)) {
    throw NumericalError(fmt::format(
        "singular interval system (equilibrated eigenvalues in [{:.3g}, {:.3g}], condition "
        "estimate {:.3g})",
        min_ev, max_ev, min_ev > 0 ? max_ev / min_ev : std::numeric_limits<double>::infinity()));
  }
  const Vector rhs = scale.cwiseProduct(moment);
  Eigen::LLT<Matrix> llt(equil);
  const Vector y = llt.info() == Eigen::Success
                       ? Vector(llt.solve(rhs))
                       : Vector(es.eigenvectors() * (es.eigenvectors().transpose() * rhs).cwiseQuotient(ev));
  return scale.cwiseProduct(y);
}

IntervalSystems accumulate_systems(const PanelDataset& panel, const CovariateSource& source) {
  const int big_k = panel.grid.intervals();
  const int p = panel.regressor_size();
  IntervalSystems sys;
  sys.gram.assign(static_cast<std::size_t>(big_k), Matrix::Zero(p, p));
  sys.moment.assign(static_cast<std::size_t>(big_k), Vector::Zero(p));
  sys.risk_set_size.assign(static_cast<std::size_t>(big_k), 0);
  sys.treated_count.assign(static_cast<std::size_t>(big_k), 0);
  Vector w(p);
  for (int i = 0; i < panel.n(); ++i) {
    const auto& s = panel.subjects[static_cast<std::size_t>(i)];
    for (int k = 0; k < s.follow_up_end; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      fill_regressor(panel, i, k, source, w);
      sys.gram[kk].selfadjointView<Eigen::Lower>().rankUpdate(w);
      sys.moment[kk] += w * static_cast<double>(s.event_counts[kk]);
      ++sys.risk_set_size[kk];
      if (s.treated_at(k)) ++sys.treated_count[kk];
    }
  }
  for (auto& g : sys.gram) g = g.selfadjointView<Eigen::Lower>();
  return sys;
}

std::vector<Matrix> bias_pads(const PanelDataset& panel, const ErrorCovariance& errors) {
  const int big_k = panel.grid.intervals();
  const int p = panel.regressor_size();
  const int off = panel.x_offset();
  const int dx = panel.d_x;
  std::vector<Matrix> pads(static_cast<std::size_t>(big_k), Matrix::Zero(p, p));
  for (const auto& s : panel.subjects) {
    if (!s.treatment_start) continue;
    for (int k = *s.treatment_start; k < s.follow_up_end; ++k) {
      const int l = k - *s.treatment_start + 1;
      if (l > errors.max_horizon()) {
        throw DataError(fmt::format("subject {}: no error covariance for horizon {}", s.id, l));
      }
      pads[static_cast<std::size_t>(k)].block(off, off, dx, dx) += errors.at(l);
    }
  }
  return pads;
}

namespace {

CoefficientPaths empty_paths(const PanelDataset& panel, std::string label) {
  CoefficientPaths out;
  out.grid = panel.grid;
  out.d_z = panel.d_z;
  out.d_x = panel.d_x;
  out.label = std::move(label);
  out.coef = Matrix::Constant(panel.grid.intervals(), panel.regressor_size(), kNaN);
  out.fallback.assign(static_cast<std::size_t>(panel.grid.intervals()), false);
  return out;
}

// Columns with a nonzero diagonal in the raw Gram; the rest are not estimable.
std::vector<int> active_columns(const Matrix& raw_gram) {
  std::vector<int> cols;
  for (int c = 0; c < raw_gram.rows(); ++c) {
    if (raw_gram(c, c) != 0.0) cols.push_back(c);
  }
  return cols;
}

Matrix restrict(const Matrix& m, const std::vector<int>& cols) {
  const auto n = static_cast<Eigen::Index>(cols.size());
  Matrix out(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) out(a, b) = m(cols[a], cols[b]);
  }
  return out;
}

Vector restrict(const Vector& v, const std::vector<int>& cols) {
  Vector out(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t a = 0; a < cols.size(); ++a) out(static_cast<Eigen::Index>(a)) = v(cols[a]);
  return out;
}

// Definiteness judged after scaling by the uncorrected diagonal, so the test
// does not depend on the units of individual regressors.
bool positive_definite(const Matrix& corrected, const Matrix& raw) {
  const Vector scale = raw.diagonal().cwiseSqrt().cwiseInverse();
  const Matrix equil = scale.asDiagonal() * corrected * scale.asDiagonal();
  return min_eigenvalue(equil) > 1e-12 * static_cast<double>(equil.rows());
}

std::string interval_context(int k, int risk_set) {
  return fmt::format("interval {} (risk set {})", k, risk_set);
}

}  // namespace

CoefficientPaths fit(const PanelDataset& panel, const CovariateSource& source,
                     const FitOptions& options) {
  std::string label = "naive";
  if (source.kind() == CovariateSource::Kind::TrueCounterfactual) label = "oracle";
  if (source.kind() == CovariateSource::Kind::ForecastCounterfactual) label = "uncorrected";
  CoefficientPaths out = empty_paths(panel, label);
  const IntervalSystems sys = accumulate_systems(panel, source);
  out.risk_set_size = sys.risk_set_size;
  out.treated_count = sys.treated_count;
  for (int k = 0; k < panel.grid.intervals(); ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (sys.risk_set_size[kk] == 0) continue;
    const auto cols = active_columns(sys.gram[kk]);
    try {
      const Vector a = solve_interval(restrict(sys.gram[kk], cols), restrict(sys.moment[kk], cols),
                                      panel.grid.width(k), options.ridge);
      for (std::size_t c = 0; c < cols.size(); ++c) out.coef(k, cols[c]) = a(static_cast<Eigen::Index>(c));
    } catch (const NumericalError& e) {
      throw NumericalError(fmt::format("{} fit, {}: {}", label,
                                       interval_context(k, sys.risk_set_size[kk]), e.what()));
    }
  }
  return out;
}

CoefficientPaths fit_debiased(const PanelDataset& panel,
                              std::shared_ptr<const ForecastSet> forecasts,
                              const ErrorCovariance& errors, const FitOptions& options) {
  CoefficientPaths out = empty_paths(panel, "debiased");
  const IntervalSystems sys = accumulate_systems(panel, CovariateSource::forecast(std::move(forecasts)));
  const std::vector<Matrix> pads = bias_pads(panel, errors);
  out.risk_set_size = sys.risk_set_size;
  out.treated_count = sys.treated_count;
  for (int k = 0; k < panel.grid.intervals(); ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (sys.risk_set_size[kk] == 0) continue;
    const auto cols = active_columns(sys.gram[kk]);
    const Matrix raw = restrict(sys.gram[kk], cols);
    Matrix gram = restrict(Matrix(sys.gram[kk] - pads[kk]), cols);
    const Vector moment = restrict(sys.moment[kk], cols);
    const double delta = panel.grid.width(k);
    // the corrected trace can be negative; the uncorrected one sets the scale
    const double floor = 1e-8 * raw.trace() / static_cast<double>(cols.size());
    double ridge = 0.0;
    if (!positive_definite(gram, raw)) {
      switch (options.fallback.kind) {
        case FallbackPolicy::Kind::PsdFloor:
          gram = eigen_floor(gram, floor);
          break;
        case FallbackPolicy::Kind::Ridge:
          ridge = options.fallback.ridge;
          break;
        case FallbackPolicy::Kind::Fail:
          throw NumericalError(fmt::format(
              "debiased fit, {}: corrected Gram matrix is not positive definite (min eigenvalue "
              "{:.3g})",
              interval_context(k, sys.risk_set_size[kk]), min_eigenvalue(gram)));
      }
      out.fallback[kk] = true;
    }
    try {
      const Vector a = solve_interval(gram, moment, delta, ridge);
      for (std::size_t c = 0; c < cols.size(); ++c) out.coef(k, cols[c]) = a(static_cast<Eigen::Index>(c));
    } catch (const NumericalError& e) {
      throw NumericalError(fmt::format("debiased fit, {}: {}",
                                       interval_context(k, sys.risk_set_size[kk]), e.what()));
    }
  }
  return out;
}

CoefficientPaths fit_debiased(const PanelDataset& panel, const VarModel& model,
                              const FitOptions& options) {
  auto forecasts = std::make_shared<const ForecastSet>(forecast_all(model, panel));
  return fit_debiased(panel, std::move(forecasts),
                      error_covariance(model, std::max(1, panel.grid.intervals())), options);
}

namespace {

Vector row_or_zero(const Matrix& coef, int k) {
  Vector a = coef.row(k).transpose();
  for (Eigen::Index c = 0; c < a.size(); ++c) {
    if (std::isnan(a(c))) a(c) = 0.0;
  }
  return a;
}

void check_coef(const PanelDataset& panel, const Matrix& coef) {
  if (coef.rows() != panel.grid.intervals() || coef.cols() != panel.regressor_size()) {
    throw DataError(fmt::format("coefficient matrix is {}x{}, panel needs {}x{}", coef.rows(),
                                coef.cols(), panel.grid.intervals(), panel.regressor_size()));
  }
}

}  // namespace

double empirical_risk(const PanelDataset& panel, const Matrix& coef, const CovariateSource& source) {
  check_coef(panel, coef);
  if (panel.n() == 0) return 0.0;
  std::vector<Vector> rows;
  for (int k = 0; k < coef.rows(); ++k) rows.push_back(row_or_zero(coef, k));
  Vector w(panel.regressor_size());
  double total = 0.0;
  for (int i = 0; i < panel.n(); ++i) {
    const auto& s = panel.subjects[static_cast<std::size_t>(i)];
    for (int k = 0; k < s.follow_up_end; ++k) {
      fill_regressor(panel, i, k, source, w);
      const double fit = rows[static_cast<std::size_t>(k)].dot(w);
      total += fit * fit * panel.grid.width(k) -
               2.0 * fit * s.event_counts[static_cast<std::size_t>(k)];
    }
  }
  return total / panel.n();
}

double bias_term(const PanelDataset& panel, const Matrix& coef, const ErrorCovariance& errors) {
  check_coef(panel, coef);
  if (panel.n() == 0) return 0.0;
  const int off = panel.x_offset();
  double total = 0.0;
  for (const auto& s : panel.subjects) {
    if (!s.treatment_start) continue;
    for (int k = *s.treatment_start; k < s.follow_up_end; ++k) {
      const Vector ax = row_or_zero(coef, k).segment(off, panel.d_x);
      total += ax.dot(errors.at(k - *s.treatment_start + 1) * ax) * panel.grid.width(k);
    }
  }
  return total / panel.n();
}

double debiased_risk(const PanelDataset& panel, const Matrix& coef,
                     std::shared_ptr<const ForecastSet> forecasts, const ErrorCovariance& errors) {
  return empirical_risk(panel, coef, CovariateSource::forecast(std::move(forecasts))) +
         bias_term(panel, coef, errors);
}

namespace {

std::string num_or_na(double v) { return std::isnan(v) ? "NA" : fmt::format("{}", v); }

}  // namespace

void write_coefficients_csv(std::ostream& out, const CoefficientPaths& paths, bool header) {
  if (header) out << "t_index,t,estimator,coef_name,value,cumulative,flag_fallback\n";
  const Matrix cum = paths.cumulative();
  const auto names = paths.names();
  for (int k = 0; k <= paths.intervals(); ++k) {
    const bool flag = k < paths.intervals() && paths.fallback[static_cast<std::size_t>(k)];
    for (int c = 0; c < paths.p(); ++c) {
      const double v = k < paths.intervals() ? paths.coef(k, c) : kNaN;
      out << fmt::format("{},{},{},{},{},{},{}\n", k, paths.grid.t(k), paths.label,
                         names[static_cast<std::size_t>(c)], num_or_na(v), cum(k, c), flag ? 1 : 0);
    }
  }
}

void write_cumulative_csv(std::ostream& out, const CoefficientPaths& paths) {
  const auto names = paths.names();
  out << "t_index,t";
  for (const auto& n : names) out << ",B_" << n;
  out << '\n';
  const Matrix cum = paths.cumulative();
  for (int k = 0; k <= paths.intervals(); ++k) {
    out << fmt::format("{},{}", k, paths.grid.t(k));
    for (int c = 0; c < paths.p(); ++c) out << fmt::format(",{}", cum(k, c));
    out << '\n';
  }
}

}  // namespace debiatt
