#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "debiatt/panel.hpp"

namespace testing {

using debiatt::Matrix;
using debiatt::Vector;

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Subject on grid points 0..counts.size() with a one-column X path.
inline debiatt::SubjectRecord subject(std::int64_t id, Vector z, std::vector<double> x,
                                      std::vector<int> counts,
                                      std::optional<int> start = std::nullopt) {
  debiatt::SubjectRecord s;
  s.id = id;
  s.baseline = std::move(z);
  s.follow_up_end = static_cast<int>(counts.size());
  s.covariates = Matrix(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t k = 0; k < x.size(); ++k) s.covariates(static_cast<Eigen::Index>(k), 0) = x[k];
  s.event_counts = std::move(counts);
  s.treatment_start = start;
  return s;
}

// Largest |a - b| over entries; NaN must match NaN, otherwise +inf.
inline double max_diff_nan_aware(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const bool na = std::isnan(a(i, j)), nb = std::isnan(b(i, j));
      if (na != nb) return INFINITY;
      if (!na) worst = std::max(worst, std::abs(a(i, j) - b(i, j)));
    }
  }
  return worst;
}

// Largest |a - b| / max(1, |a|); NaN must match NaN, otherwise +inf.
inline double max_rel_diff_nan_aware(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    if (std::isnan(x) != std::isnan(y)) return INFINITY;
    if (!std::isnan(x)) worst = std::max(worst, std::abs(x - y) / std::max(1.0, std::abs(x)));
  }
  return worst;
}

inline bool identical_nan_aware(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    if (std::isnan(x) != std::isnan(y)) return false;
    if (!std::isnan(x) && x != y) return false;
  }
  return true;
}

inline double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_var(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace testing
