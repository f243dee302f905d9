/*
 Copyright 2026 The dgnopt Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include "dgnopt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dgnopt {

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

double asymmetry(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

SymmetricInverse::SymmetricInverse(const Matrix& m, double damping, double rel_tol) {
  const int n = static_cast<int>(m.rows());
  if (n == 0) return;
  Matrix s = symmetrized(m);
  s.diagonal().array() += damping;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  basis_ = eig.eigenvectors();
  const Vector& values = eig.eigenvalues();
  const double top = values.maxCoeff();
  inv_eigenvalues_ = Vector::Zero(n);
  double kept_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    if (top > 0.0 && values[i] > rel_tol * top) {
      inv_eigenvalues_[i] = 1.0 / values[i];
      kept_min = std::min(kept_min, values[i]);
    } else {
      ++dropped_;
    }
  }
  condition_ = top > 0.0 && std::isfinite(kept_min) ? top / kept_min
                                                    : std::numeric_limits<double>::infinity();
}

Matrix SymmetricInverse::solve(const Matrix& rhs) const {
  if (size() == 0) return Matrix::Zero(0, rhs.cols());
  Matrix projected = basis_.transpose() * rhs;
  projected.array().colwise() *= inv_eigenvalues_.array();
  return basis_ * projected;
}

Vector SymmetricInverse::solve(const Vector& rhs) const {
  if (size() == 0) return Vector::Zero(0);
  Vector projected = basis_.transpose() * rhs;
  projected.array() *= inv_eigenvalues_.array();
  return basis_ * projected;
}

Matrix SymmetricInverse::inverse() const {
  if (size() == 0) return Matrix::Zero(0, 0);
  return basis_ * inv_eigenvalues_.asDiagonal() * basis_.transpose();
}

Matrix pinv_sym(const Matrix& m, double damping, double rel_tol) {
  return SymmetricInverse(m, damping, rel_tol).inverse();
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Vector vec_rows(const Matrix& m) {
  Vector v(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);
  return v;
}

Matrix unvec_rows(const Vector& v, int rows, int cols) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v[i * cols + j];
  return m;
}

double relative_error(const Matrix& a, const Matrix& b, double floor) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Matrix outer_columns(const Matrix& c, const Matrix& a) {
  const Eigen::Index out = c.rows(), fan = a.rows();
  Matrix cols(out * fan, c.cols());
  for (Eigen::Index b = 0; b < c.cols(); ++b)
    for (Eigen::Index i = 0; i < out; ++i) cols.col(b).segment(i * fan, fan) = c(i, b) * a.col(b);
  return cols;
}

}  // namespace dgnopt
