#include "percflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "percflow/errors.hpp"

namespace percflow {

Eigen::VectorXd sym_eigvals(const Eigen::MatrixXd& mat) {
  if (mat.rows() != mat.cols()) throw ShapeError("matrix is not square");
  const Eigen::Index n = mat.rows();
  if (n == 0) return Eigen::VectorXd();
  const double scale = std::max(1.0, mat.cwiseAbs().maxCoeff());
  if ((mat - mat.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw SymmetryError("matrix is not symmetric within 1e-9");
  }

  Eigen::MatrixXd a = 0.5 * (mat + mat.transpose());
  const double total = a.squaredNorm();
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off <= 1e-30 * total || off == 0.0) break;

    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Rotation angle that annihilates a(p, q); t is the smaller root.
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
      }
    }
  }

  Eigen::VectorXd eig = a.diagonal();
  std::sort(eig.data(), eig.data() + n, std::greater<double>());
  return eig;
}

}  // namespace percflow
