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

#include <cstdint>
#include <functional>
#include <vector>

#include "dgnopt/dynamics.hpp"
#include "dgnopt/linalg.hpp"
#include "dgnopt/netgraph.hpp"

/// Brute-force references for the test suite. Nothing here uses the game recursions.
namespace dgnopt::oracle {

/// Central differences of a scalar function, coordinate by coordinate.
Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5);

/// Second derivative along a direction by central differences.
double fd_curvature(const std::function<double(const Vector&)>& f, const Vector& x, const Vector& dir,
                    double h = 1e-3);

/// Quadratic model over several players: ½ δᵀ H δ + gᵀ δ with H given by blocks.
struct JointQuadratic {
  std::vector<std::vector<Matrix>> blocks;  // blocks[p][q]
  std::vector<Vector> gradients;
};

struct JointSolution {
  std::vector<Vector> gains;  // H⁻¹ g per player; the minimizer is -gains
  double value = 0.0;         // minimum of the model
};

/// Solves the stacked block system directly; throws SingularSystem when H is not positive definite.
JointSolution dense_joint_solve(const JointQuadratic& q, double damping = 0.0);

/// Linear dynamics x_{t+1} = A_t x_t + Σ_n B_{t,n} u_{t,n}, stage cost (c/2)‖u‖², terminal ½ (x-y)ᵀ Q (x-y)
/// averaged over the batch columns.
struct LinearGame : StageDynamics {
  struct Actor {
    int slot = 0;
    Matrix B;
  };
  std::vector<Matrix> A;                // per stage
  std::vector<std::vector<Actor>> actors;  // per stage
  Matrix Q;
  Matrix target;  // one column per sample or a single broadcast column
  double decay = 1.0;
  int slots = 1;

  int horizon() const override { return static_cast<int>(A.size()); }
  int players() const override { return slots; }
  std::vector<PlayerInfo> stage_players(int t) const override;
  Matrix propagate(int t, const Matrix& x, const Vector& params) const override;

  int param_count() const;
  std::vector<Matrix> rollout(const Vector& params, const Matrix& x0) const;
  /// Batch-mean terminal cost plus stage costs.
  double cost(const Vector& params, const Matrix& x0) const;
  /// Exact linearization with explicit per-sample Jacobians.
  Linearization linearize(const Vector& params, const Matrix& x0) const;

  static LinearGame random(int horizon, int slots, int state_dim, int action_dim, std::uint64_t seed,
                           bool all_players_every_stage = true);
};

struct LqOptimum {
  Vector params;
  double value = 0.0;
};

/// Joint minimum of a linear game, by flattening every stage into one dense quadratic program.
LqOptimum lq_game_value(const LinearGame& game, const Matrix& x0);

/// Feedback Nash equilibrium of a batch-1 linear game with at most one actor per stage:
/// per-player quadratic values in absolute coordinates, actions u = α + β x.
struct AffinePolicy {
  Vector alpha;
  Matrix beta;
};
std::vector<std::vector<AffinePolicy>> lq_feedback_nash(const LinearGame& game);

/// Explicit minimum over the chosen players' parameter steps of the local quadratic model of one stage:
///   Σ_b v_bᵀ (Fx_b δx + Σ Fθ_b δθ) + ½ mean_b (·)ᵀ Vxx (·) + Σ (c/2)‖θ + δθ‖²
/// as a function of a shared state shift δx. Players not chosen keep δθ = 0.
struct LocalStageModel {
  std::vector<Matrix> fx;                    // [sample]
  std::vector<std::vector<Matrix>> ftheta;   // [player][sample]
  std::vector<Vector> theta;                 // [player]
  Matrix next_first;                         // per-sample columns
  Matrix next_second;
  double decay = 0.0;
  std::vector<int> chosen;

  double minimum(const Vector& dx) const;
};

// Fixtures.

Matrix random_matrix(int rows, int cols, std::uint64_t seed, double scale = 1.0);
Vector random_vector(int n, std::uint64_t seed, double scale = 1.0);

/// Smallest |pre-activation| over relu units along a batch.
double kink_margin(const StagedGame& game, const Vector& params, const Matrix& x0);

/// Input batch whose relu pre-activations all stay at least `margin` away from zero.
Matrix kink_safe_input(const StagedGame& game, const Vector& params, int batch, std::uint64_t seed,
                       double margin = 1e-3);

/// Per-sample stage Jacobians by central differences of the stage map.
struct FdStage {
  std::vector<Matrix> fx;
  std::vector<std::vector<Matrix>> ftheta;
};
FdStage fd_stage(const StageDynamics& game, int t, const Matrix& x, const Vector& params, double h = 1e-6);

/// The chain, residual and inception presets at small sizes, indexed by id.
NetworkGraph micro_net(int id, std::uint64_t seed);

}  // namespace dgnopt::oracle
