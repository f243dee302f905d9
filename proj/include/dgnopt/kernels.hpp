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

#include "dgnopt/linalg.hpp"

/// Batch kernels. Each has an OpenMP version and a plain serial reference.
namespace dgnopt::kernels {

/// pre(:, b) = W z_b + bias for a row-major out x (in + 1) parameter block.
void dense_forward(const double* theta, int in_dim, int out_dim, const Matrix& z, Matrix& pre);

/// Parameter-state curvature of a dense player.
///
/// Row block i of the result is (1/B) Σ_b s(i,b) z_b (d_b ⊙ m_i)ᵀ J, with
/// z the augmented inputs, s the player's output derivatives, d the stage's
/// output derivatives, m_i row i of the weighting matrix and J the stage's
/// sample-independent state map.
Matrix param_state_rows(const Matrix& inputs, const Matrix& out_scale, const Matrix& stage_scale,
                        const Matrix& weight_rows, const Matrix& state_map);

/// Per-column argmax.
Eigen::VectorXi column_argmax(const Matrix& m);

namespace serial {

void dense_forward(const double* theta, int in_dim, int out_dim, const Matrix& z, Matrix& pre);
Matrix param_state_rows(const Matrix& inputs, const Matrix& out_scale, const Matrix& stage_scale,
                        const Matrix& weight_rows, const Matrix& state_map);
Eigen::VectorXi column_argmax(const Matrix& m);

}  // namespace serial

}  // namespace dgnopt::kernels
