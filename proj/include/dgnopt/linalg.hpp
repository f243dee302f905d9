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

#pragma once

#include <Eigen/Dense>

namespace dgnopt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// (M + Mᵀ) / 2.
Matrix symmetrized(const Matrix& m);

/// Largest |M - Mᵀ| entry.
double asymmetry(const Matrix& m);

/// Pseudo-inverse of a symmetric matrix through its eigendecomposition.
///
/// The input is symmetrized and shifted by `damping`. Eigenvalues at or below
/// `rel_tol` times the largest one are treated as zero, so indefinite inputs
/// are inverted on their positive part only.
class SymmetricInverse {
 public:
  SymmetricInverse() = default;
  explicit SymmetricInverse(const Matrix& m, double damping = 0.0, double rel_tol = 1e-9);

  Matrix solve(const Matrix& rhs) const;
  Vector solve(const Vector& rhs) const;
  Matrix inverse() const;

  int size() const { return static_cast<int>(inv_eigenvalues_.size()); }
  int dropped() const { return dropped_; }
  /// Ratio of the largest to the smallest kept eigenvalue (infinity when nothing is kept).
  double condition() const { return condition_; }

 private:
  Matrix basis_;
  Vector inv_eigenvalues_;
  int dropped_ = 0;
  double condition_ = 1.0;
};

Matrix pinv_sym(const Matrix& m, double damping = 0.0, double rel_tol = 1e-9);

Matrix kron(const Matrix& a, const Matrix& b);

/// Row-major vectorization, the layout of dense layer parameters.
Vector vec_rows(const Matrix& m);
Matrix unvec_rows(const Vector& v, int rows, int cols);
/// Column b is vec_rows(c_b a_bᵀ).
Matrix outer_columns(const Matrix& c, const Matrix& a);

/// ‖a - b‖_F / max(‖b‖_F, floor).
double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-300);

bool all_finite(const Matrix& m);

}  // namespace dgnopt
