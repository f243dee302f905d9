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

#include "dgnopt/kernels.hpp"

namespace dgnopt::kernels {

namespace {

using RowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

void dense_forward(const double* theta, int in_dim, int out_dim, const Matrix& z, Matrix& pre) {
  RowMap w(theta, out_dim, in_dim + 1);
  const auto weights = w.leftCols(in_dim);
  const auto bias = w.col(in_dim);
  const int batch = static_cast<int>(z.cols());
  pre.resize(out_dim, batch);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) pre.col(b).noalias() = weights * z.col(b) + bias;
}

Matrix param_state_rows(const Matrix& inputs, const Matrix& out_scale, const Matrix& stage_scale,
                        const Matrix& weight_rows, const Matrix& state_map) {
  const int fan = static_cast<int>(inputs.rows());
  const int out = static_cast<int>(out_scale.rows());
  const int batch = static_cast<int>(inputs.cols());
  Matrix result(out * fan, state_map.cols());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < out; ++i) {
    Matrix scaled = inputs * out_scale.row(i).transpose().asDiagonal();
    Matrix cross = scaled * stage_scale.transpose();
    cross.array().rowwise() *= weight_rows.row(i).array();
    result.middleRows(i * fan, fan).noalias() = (cross * state_map) / batch;
  }
  return result;
}

Eigen::VectorXi column_argmax(const Matrix& m) {
  const int cols = static_cast<int>(m.cols());
  Eigen::VectorXi out(cols);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < cols; ++b) {
    Eigen::Index best = 0;
    m.col(b).maxCoeff(&best);
    out[b] = static_cast<int>(best);
  }
  return out;
}

namespace serial {

void dense_forward(const double* theta, int in_dim, int out_dim, const Matrix& z, Matrix& pre) {
  const int stride = in_dim + 1;
  pre.resize(out_dim, z.cols());
  for (Eigen::Index b = 0; b < z.cols(); ++b)
    for (int i = 0; i < out_dim; ++i) {
      double acc = theta[i * stride + in_dim];
      for (int j = 0; j < in_dim; ++j) acc += theta[i * stride + j] * z(j, b);
      pre(i, b) = acc;
    }
}

Matrix param_state_rows(const Matrix& inputs, const Matrix& out_scale, const Matrix& stage_scale,
                        const Matrix& weight_rows, const Matrix& state_map) {
  const Eigen::Index fan = inputs.rows();
  const Eigen::Index out = out_scale.rows();
  const Eigen::Index batch = inputs.cols();
  const Eigen::Index next = stage_scale.rows();
  Matrix result = Matrix::Zero(out * fan, state_map.cols());
  for (Eigen::Index i = 0; i < out; ++i)
    for (Eigen::Index b = 0; b < batch; ++b)
      for (Eigen::Index r = 0; r < next; ++r) {
        const double w = out_scale(i, b) * stage_scale(r, b) * weight_rows(i, r) / batch;
        if (w == 0.0) continue;
        for (Eigen::Index j = 0; j < fan; ++j)
          result.row(i * fan + j) += (w * inputs(j, b)) * state_map.row(r);
      }
  return result;
}

Eigen::VectorXi column_argmax(const Matrix& m) {
  Eigen::VectorXi out(m.cols());
  for (Eigen::Index b = 0; b < m.cols(); ++b) {
    int best = 0;
    for (Eigen::Index i = 1; i < m.rows(); ++i)
      if (m(i, b) > m(best, b)) best = static_cast<int>(i);
    out[b] = best;
  }
  return out;
}

}  // namespace serial

}  // namespace dgnopt::kernels
