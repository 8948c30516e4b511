#include "debiatt/var_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "debiatt/error.hpp"

namespace debiatt {

int last_untreated_index(const SubjectRecord& s) {
  if (s.treatment_start) return std::min(*s.treatment_start - 1, s.follow_up_end);
  return s.follow_up_end;
}

DesignMatrix build_design_matrix(const PanelDataset& panel) {
  const int dz = panel.d_z;
  const int dx = panel.d_x;
  std::size_t rows = 0;
  for (const auto& s : panel.subjects) rows += static_cast<std::size_t>(std::max(0, last_untreated_index(s)));
  if (rows == 0) throw DataError("no untreated transitions available to fit the VAR model");

  DesignMatrix out;
  out.design.resize(static_cast<Eigen::Index>(rows), 1 + dz + dx);
  out.targets.resize(static_cast<Eigen::Index>(rows), dx);
  out.row_index.reserve(rows);
  Eigen::Index r = 0;
  for (const auto& s : panel.subjects) {
    const int t_max = last_untreated_index(s);
    for (int k = 1; k <= t_max; ++k, ++r) {
      out.design(r, 0) = 1.0;
      out.design.row(r).segment(1, dz) = s.baseline.transpose();
      out.design.row(r).segment(1 + dz, dx) = s.covariates.row(k - 1);
      out.targets.row(r) = s.covariates.row(k);
      out.row_index.emplace_back(s.id, k);
    }
  }
  return out;
}

namespace {

std::string column_name(int c, int d_z) {
  if (c == 0) return "intercept";
  if (c <= d_z) return fmt::format("Z{}", c);
  return fmt::format("X{}(lag)", c - d_z);
}

}  // namespace

VarModel fit_var(const DesignMatrix& dm, int d_z, int d_x) {
  const Eigen::Index rows = dm.design.rows();
  const Eigen::Index p = dm.design.cols();
  if (rows < p + 1) {
    throw DataError(fmt::format("VAR fit needs at least {} untreated transitions, found {}", p + 1,
                                rows));
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(dm.design);
  if (qr.rank() < p) {
    // columns beyond the rank in pivot order are the ones in a collinear set
    std::vector<std::string> names;
    const auto perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < p; ++j) names.push_back(column_name(perm(j), d_z));
    throw NumericalError(fmt::format("rank-deficient VAR design (rank {} of {}); collinear columns: {}",
                                     qr.rank(), p, fmt::join(names, ", ")));
  }
  const Matrix coeffs = qr.solve(dm.targets);  // p x d_x
  const Matrix resid = dm.targets - dm.design * coeffs;

  VarModel m;
  m.n_obs = static_cast<int>(rows);
  m.dof = static_cast<int>(rows - p);
  m.intercept = coeffs.row(0).transpose();
  m.z_loadings = coeffs.middleRows(1, d_z).transpose();
  m.pi = coeffs.middleRows(1 + d_z, d_x).transpose();
  m.resid_cov = (resid.transpose() * resid) / static_cast<double>(m.dof);
  m.resid_cov = 0.5 * (m.resid_cov + m.resid_cov.transpose());
  return m;
}

VarModel fit_var(const PanelDataset& panel) {
  return fit_var(build_design_matrix(panel), panel.d_z, panel.d_x);
}

ForecastPath forecast_counterfactuals(const VarModel& model, const SubjectRecord& s) {
  if (!s.treatment_start) {
    throw DataError(fmt::format("subject {} is never treated; nothing to forecast", s.id));
  }
  const int start = *s.treatment_start;
  if (start < 1) {
    throw DataError(fmt::format(
        "subject {} is treated at t_index 0; no pre-treatment observation to anchor the forecast",
        s.id));
  }
  if (start > s.follow_up_end) {
    throw DataError(fmt::format("subject {}: treatment start {} after follow-up end {}", s.id,
                                start, s.follow_up_end));
  }
  if (model.d_x() != s.covariates.cols() || model.d_z() != s.baseline.size()) {
    throw DataError("VAR model dimensions do not match the subject");
  }
  ForecastPath path;
  path.id = s.id;
  path.start = start;
  path.values.resize(s.follow_up_end - start + 1, model.d_x());
  const Vector b0 = model.subject_intercept(s.baseline);
  Vector prev = s.covariates.row(start - 1).transpose();
  for (Eigen::Index r = 0; r < path.values.rows(); ++r) {
    prev = b0 + model.pi * prev;
    path.values.row(r) = prev.transpose();
  }
  return path;
}

ForecastSet forecast_all(const VarModel& model, const PanelDataset& panel) {
  ForecastSet out(panel.subjects.size());
  for (std::size_t i = 0; i < panel.subjects.size(); ++i) {
    const auto& s = panel.subjects[i];
    if (s.treatment_start && *s.treatment_start <= s.follow_up_end) {
      out[i] = forecast_counterfactuals(model, s);
    } else {
      out[i].id = s.id;
      out[i].values.resize(0, panel.d_x);
    }
  }
  return out;
}

ErrorCovariance error_covariance(const Matrix& pi, const Matrix& sigma, int l_max) {
  if (l_max < 1) throw DataError("error_covariance needs l_max >= 1");
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(l_max));
  Matrix power = Matrix::Identity(pi.rows(), pi.cols());
  Matrix acc = Matrix::Zero(sigma.rows(), sigma.cols());
  for (int l = 1; l <= l_max; ++l) {
    acc += power * sigma * power.transpose();
    out.push_back(0.5 * (acc + acc.transpose()));
    power = power * pi;
  }
  return ErrorCovariance(std::move(out));
}

// ---------------------------------------------------------------------------

namespace {

void write_rows(std::ostream& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::string line;
    for (Eigen::Index c = 0; c < m.cols(); ++c) line += fmt::format("{}{}", c ? " " : "", m(r, c));
    out << line << '\n';
  }
}

Matrix read_rows(std::istream& in, Eigen::Index rows, Eigen::Index cols, const char* what) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      std::string tok;
      if (!(in >> tok)) throw DataError(fmt::format("VAR model file truncated in {}", what));
      try {
        m(r, c) = std::stod(tok);
      } catch (const std::exception&) {
        throw DataError(fmt::format("VAR model file: bad value '{}' in {}", tok, what));
      }
    }
  }
  return m;
}

}  // namespace

void write_var_model(std::ostream& out, const VarModel& m) {
  out << fmt::format("var1 {} {} {} {}\n", m.d_x(), m.d_z(), m.n_obs, m.dof);
  write_rows(out, m.intercept.transpose());
  write_rows(out, m.pi);
  if (m.d_z() > 0) write_rows(out, m.z_loadings);
  write_rows(out, m.resid_cov);
}

void write_var_model(const std::filesystem::path& path, const VarModel& m) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot write VAR model file {}", path.string()));
  write_var_model(out, m);
}

VarModel read_var_model(std::istream& in) {
  std::string tag;
  int dx = 0, dz = 0;
  VarModel m;
  if (!(in >> tag >> dx >> dz >> m.n_obs >> m.dof) || tag != "var1" || dx < 1 || dz < 0) {
    throw DataError("VAR model file: bad header (expected 'var1 d_x d_z n_obs dof')");
  }
  m.intercept = read_rows(in, 1, dx, "intercept").row(0).transpose();
  m.pi = read_rows(in, dx, dx, "pi");
  m.z_loadings = dz > 0 ? read_rows(in, dx, dz, "z_loadings") : Matrix(dx, 0);
  m.resid_cov = read_rows(in, dx, dx, "resid_cov");
  return m;
}

VarModel read_var_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open VAR model file {}", path.string()));
  return read_var_model(in);
}

}  // namespace debiatt
