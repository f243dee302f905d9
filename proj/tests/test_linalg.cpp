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

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "dgnopt/kernels.hpp"
#include "dgnopt/linalg.hpp"
#include "support.hpp"

using namespace dgnopt;
using dgnopt::testing::random_matrix;

TEST_CASE("symmetric inverse matches a dense solve on positive definite input") {
  const Matrix l = random_matrix(6, 6, 1);
  const Matrix spd = l * l.transpose() + Matrix::Identity(6, 6);
  const SymmetricInverse inv(spd);
  const Matrix rhs = random_matrix(6, 3, 2);
  CHECK(relative_error(inv.solve(rhs), spd.ldlt().solve(rhs)) < 1e-12);
  CHECK(inv.dropped() == 0);
  CHECK(relative_error(inv.inverse() * spd, Matrix::Identity(6, 6)) < 1e-12);
}

TEST_CASE("symmetric inverse keeps only the positive part of indefinite input") {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(5, 5, 3));
  const Matrix q = qr.householderQ();
  Vector eig(5);
  eig << -2.0, -1e-14, 0.5, 1.0, 4.0;
  const Matrix m = q * eig.asDiagonal() * q.transpose();
  const SymmetricInverse inv(m);
  CHECK(inv.dropped() == 2);
  Vector expected(5);
  expected << 0.0, 0.0, 2.0, 1.0, 0.25;
  CHECK(relative_error(inv.inverse(), Matrix(q * expected.asDiagonal() * q.transpose())) < 1e-10);
  CHECK(inv.condition() == doctest::Approx(8.0));
  CHECK(relative_error(pinv_sym(m, 0.0), inv.inverse()) < 1e-12);
}

TEST_CASE("damping shifts the spectrum before inversion") {
  const Matrix m = Matrix::Zero(3, 3);
  const SymmetricInverse inv(m, 0.5);
  CHECK(relative_error(inv.inverse(), Matrix(2.0 * Matrix::Identity(3, 3))) < 1e-14);
}

TEST_CASE("row-major vectorization matches the Kronecker identity") {
  const Matrix b = random_matrix(3, 3, 4), a = random_matrix(4, 4, 5), x = random_matrix(3, 4, 6);
  const Vector lhs = vec_rows(b * x * a.transpose());
  const Vector rhs = kron(b, a) * vec_rows(x);
  CHECK(relative_error(lhs, rhs) < 1e-13);
  CHECK(unvec_rows(vec_rows(x), 3, 4) == x);
}

TEST_CASE("outer columns are vectorized per-sample outer products") {
  const Matrix c = random_matrix(3, 4, 7), a = random_matrix(5, 4, 8);
  const Matrix out = outer_columns(c, a);
  REQUIRE(out.rows() == 15);
  REQUIRE(out.cols() == 4);
  for (int b = 0; b < 4; ++b) CHECK(relative_error(out.col(b), vec_rows(c.col(b) * a.col(b).transpose())) < 1e-15);
}

TEST_CASE("relative error and finiteness helpers") {
  const Matrix z = Matrix::Zero(2, 2);
  CHECK(relative_error(z, z, 1.0) == 0.0);
  CHECK(relative_error(Matrix::Ones(2, 2), z, 1.0) == doctest::Approx(2.0));
  Matrix bad = z;
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(all_finite(bad));
  CHECK(all_finite(z));
  CHECK(asymmetry(symmetrized(random_matrix(4, 4, 9))) == 0.0);
}

TEST_CASE("parallel kernels agree with the serial references") {
  const int in = 7, out = 5, batch = 33;
  const Vector theta = dgnopt::testing::random_vector(out * (in + 1), 10);
  const Matrix z = random_matrix(in, batch, 11);
  Matrix fast, slow;
  kernels::dense_forward(theta.data(), in, out, z, fast);
  kernels::serial::dense_forward(theta.data(), in, out, z, slow);
  CHECK(relative_error(fast, slow) < 1e-15);
  Matrix w = unvec_rows(theta, out, in + 1);
  CHECK(relative_error(slow, Matrix((w.leftCols(in) * z).colwise() + w.col(in))) < 1e-13);

  Matrix inputs(in + 1, batch);
  inputs << z, Matrix::Ones(1, batch);
  const Matrix out_scale = random_matrix(out, batch, 12);
  const Matrix stage_scale = random_matrix(6, batch, 13);
  const Matrix weights = random_matrix(out, 6, 14);
  const Matrix state_map = random_matrix(6, 9, 15);
  CHECK(relative_error(kernels::param_state_rows(inputs, out_scale, stage_scale, weights, state_map),
                       kernels::serial::param_state_rows(inputs, out_scale, stage_scale, weights, state_map)) < 1e-13);
  CHECK(kernels::column_argmax(fast) == kernels::serial::column_argmax(fast));
}
