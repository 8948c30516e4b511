#pragma once

#include <Eigen/Dense>

namespace debiatt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Smallest eigenvalue of the symmetric part of `m`.
double min_eigenvalue(const Matrix& m);

/// Symmetric square root factor L with L * L^T == m for a PSD matrix.
/// Negative eigenvalues (round-off) are truncated at zero.
Matrix psd_factor(const Matrix& m);

/// Nearest symmetric matrix whose eigenvalues are all >= floor.
Matrix eigen_floor(const Matrix& m, double floor);

bool is_symmetric(const Matrix& m, double tol = 1e-12);

}  // namespace debiatt
