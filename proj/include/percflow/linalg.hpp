#pragma once

#include <Eigen/Dense>

namespace percflow {

// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations, sorted
// in descending order. Throws SymmetryError if |a_ij - a_ji| exceeds 1e-9
// (relative to the largest entry when that exceeds one).
Eigen::VectorXd sym_eigvals(const Eigen::MatrixXd& mat);

}  // namespace percflow
