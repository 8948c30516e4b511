#include "debiatt/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace debiatt {

double min_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Matrix psd_factor(const Matrix& m) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

Matrix eigen_floor(const Matrix& m, double floor) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  Vector vals = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

}  // namespace debiatt
