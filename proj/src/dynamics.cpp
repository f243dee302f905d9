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

#include "dgnopt/dynamics.hpp"

#include "dgnopt/error.hpp"

namespace dgnopt {

namespace {

Matrix column_for(const Matrix& m, int b) { return m.cols() == 1 ? m.col(0) : m.col(b); }

}  // namespace

DenseStage::DenseStage(std::vector<Matrix> state_jacobians,
                       std::vector<std::vector<Matrix>> param_jacobians,
                       std::vector<PlayerInfo> players)
    : fx_(std::move(state_jacobians)),
      ftheta_(std::move(param_jacobians)),
      players_(std::move(players)) {
  if (fx_.empty()) throw Error(ErrorKind::dimension_mismatch, "dense stage needs one sample");
  if (ftheta_.size() != players_.size())
    throw Error(ErrorKind::dimension_mismatch, "one Jacobian list per player expected");
  for (std::size_t p = 0; p < players_.size(); ++p) {
    if (ftheta_[p].size() != fx_.size())
      throw Error(ErrorKind::dimension_mismatch, "parameter Jacobians per sample");
    for (const Matrix& j : ftheta_[p])
      if (j.rows() != fx_[0].rows() || j.cols() != players_[p].size)
        throw Error(ErrorKind::dimension_mismatch, "parameter Jacobian shape");
  }
}

int DenseStage::state_dim() const { return static_cast<int>(fx_[0].cols()); }
int DenseStage::next_dim() const { return static_cast<int>(fx_[0].rows()); }

Matrix DenseStage::state_jvp(const Matrix& dx) const {
  Matrix out(next_dim(), batch());
  for (int b = 0; b < batch(); ++b) out.col(b) = fx_[b] * column_for(dx, b);
  return out;
}

Matrix DenseStage::state_vjp(const Matrix& g) const {
  Matrix out(state_dim(), batch());
  for (int b = 0; b < batch(); ++b) out.col(b) = fx_[b].transpose() * g.col(b);
  return out;
}

Matrix DenseStage::param_jvp(int p, const Vector& dtheta) const {
  Matrix out(next_dim(), batch());
  for (int b = 0; b < batch(); ++b) out.col(b) = ftheta_[p][b] * dtheta;
  return out;
}

Vector DenseStage::param_vjp(int p, const Matrix& g) const {
  Vector out = Vector::Zero(players_[p].size);
  for (int b = 0; b < batch(); ++b) out += ftheta_[p][b].transpose() * g.col(b);
  return out;
}

Matrix DenseStage::param_vjp_samples(int p, const Matrix& g) const {
  Matrix out(players_[p].size, batch());
  for (int b = 0; b < batch(); ++b) out.col(b) = ftheta_[p][b].transpose() * g.col(b);
  return out;
}

Matrix DenseStage::state_gram(const Matrix& m) const {
  Matrix out = Matrix::Zero(state_dim(), state_dim());
  for (int b = 0; b < batch(); ++b) out += fx_[b].transpose() * m * fx_[b];
  return out / batch();
}

Matrix DenseStage::param_state_gram(int p, const Matrix& m) const {
  Matrix out = Matrix::Zero(players_[p].size, state_dim());
  for (int b = 0; b < batch(); ++b) out += ftheta_[p][b].transpose() * m * fx_[b];
  return out / batch();
}

Matrix DenseStage::param_gram(int p, int q, const Matrix& m) const {
  Matrix out = Matrix::Zero(players_[p].size, players_[q].size);
  for (int b = 0; b < batch(); ++b) out += ftheta_[p][b].transpose() * m * ftheta_[q][b];
  return out / batch();
}

std::unique_ptr<DenseStage> materialize(const LinearizedStage& stage) {
  const int batch = stage.batch();
  std::vector<Matrix> fx(batch, Matrix(stage.next_dim(), stage.state_dim()));
  for (int j = 0; j < stage.state_dim(); ++j) {
    Matrix cols = stage.state_jvp(Vector::Unit(stage.state_dim(), j));
    for (int b = 0; b < batch; ++b) fx[b].col(j) = cols.col(b);
  }
  std::vector<std::vector<Matrix>> ftheta;
  for (std::size_t p = 0; p < stage.players().size(); ++p) {
    const int size = stage.players()[p].size;
    std::vector<Matrix> per_sample(batch, Matrix(stage.next_dim(), size));
    for (int j = 0; j < size; ++j) {
      Matrix cols = stage.param_jvp(static_cast<int>(p), Vector::Unit(size, j));
      for (int b = 0; b < batch; ++b) per_sample[b].col(j) = cols.col(b);
    }
    ftheta.push_back(std::move(per_sample));
  }
  return std::make_unique<DenseStage>(std::move(fx), std::move(ftheta), stage.players());
}

}  // namespace dgnopt
