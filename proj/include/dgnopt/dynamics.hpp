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

#include <memory>
#include <vector>

#include "dgnopt/linalg.hpp"

namespace dgnopt {

/// Actionable player at one stage: its slot index and where its parameters live.
struct PlayerInfo {
  int slot = 0;
  int offset = 0;
  int size = 0;
};

/// Layer-input view of a dense player, used by Kronecker-factored curvature.
struct KroneckerView {
  const Matrix* inputs = nullptr;  // (fan_in + 1) x B, last row is ones
  Matrix out_scale;                // fan_out x B activation derivatives
  int out_offset = 0;
  int out_dim = 0;
};

/// Batch linearization of one stage map around the nominal trajectory.
///
/// Per-sample matrices have one column per sample. Mean-reductions divide by
/// the batch size.
class LinearizedStage {
 public:
  virtual ~LinearizedStage() = default;

  virtual int state_dim() const = 0;
  virtual int next_dim() const = 0;
  virtual int batch() const = 0;
  virtual const std::vector<PlayerInfo>& players() const = 0;

  /// Columns F_x^b dx_b. A single column is broadcast to every sample.
  virtual Matrix state_jvp(const Matrix& dx) const = 0;
  /// Columns (F_x^b)ᵀ g_b.
  virtual Matrix state_vjp(const Matrix& g) const = 0;
  /// Columns F_θ^b dθ for player p.
  virtual Matrix param_jvp(int p, const Vector& dtheta) const = 0;
  /// Σ_b (F_θ^b)ᵀ g_b.
  virtual Vector param_vjp(int p, const Matrix& g) const = 0;
  /// Columns (F_θ^b)ᵀ g_b.
  virtual Matrix param_vjp_samples(int p, const Matrix& g) const = 0;
  /// mean_b (F_x^b)ᵀ M F_x^b.
  virtual Matrix state_gram(const Matrix& m) const = 0;
  /// mean_b (F_θp^b)ᵀ M F_x^b.
  virtual Matrix param_state_gram(int p, const Matrix& m) const = 0;
  /// mean_b (F_θp^b)ᵀ M F_θq^b.
  virtual Matrix param_gram(int p, int q, const Matrix& m) const = 0;

  virtual const KroneckerView* kronecker(int /*p*/) const { return nullptr; }
};

/// Linearized game along a nominal batch trajectory.
struct Linearization {
  std::vector<Matrix> states;  // x_0 .. x_T, one column per sample
  std::vector<std::unique_ptr<LinearizedStage>> stages;
  int players = 1;

  int horizon() const { return static_cast<int>(stages.size()); }
  int batch() const { return states.empty() ? 0 : static_cast<int>(states.front().cols()); }
};

/// Shared stage dynamics, as needed by the feedback pass.
class StageDynamics {
 public:
  virtual ~StageDynamics() = default;
  virtual int horizon() const = 0;
  virtual int players() const = 0;
  virtual std::vector<PlayerInfo> stage_players(int t) const = 0;
  /// x_{t+1} for every column of x.
  virtual Matrix propagate(int t, const Matrix& x, const Vector& params) const = 0;
};

/// Linearized stage stored as explicit per-sample Jacobians.
class DenseStage : public LinearizedStage {
 public:
  DenseStage(std::vector<Matrix> state_jacobians,
             std::vector<std::vector<Matrix>> param_jacobians,  // [player][sample]
             std::vector<PlayerInfo> players);

  int state_dim() const override;
  int next_dim() const override;
  int batch() const override { return static_cast<int>(fx_.size()); }
  const std::vector<PlayerInfo>& players() const override { return players_; }

  Matrix state_jvp(const Matrix& dx) const override;
  Matrix state_vjp(const Matrix& g) const override;
  Matrix param_jvp(int p, const Vector& dtheta) const override;
  Vector param_vjp(int p, const Matrix& g) const override;
  Matrix param_vjp_samples(int p, const Matrix& g) const override;
  Matrix state_gram(const Matrix& m) const override;
  Matrix param_state_gram(int p, const Matrix& m) const override;
  Matrix param_gram(int p, int q, const Matrix& m) const override;

  const Matrix& state_jacobian(int b) const { return fx_[b]; }
  const Matrix& param_jacobian(int p, int b) const { return ftheta_[p][b]; }

 private:
  std::vector<Matrix> fx_;
  std::vector<std::vector<Matrix>> ftheta_;
  std::vector<PlayerInfo> players_;
};

/// Explicit per-sample Jacobians of any linearized stage.
std::unique_ptr<DenseStage> materialize(const LinearizedStage& stage);

}  // namespace dgnopt
