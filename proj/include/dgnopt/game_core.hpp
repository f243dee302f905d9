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

#include <functional>
#include <vector>

#include "dgnopt/dynamics.hpp"
#include "dgnopt/linalg.hpp"

namespace dgnopt {

enum class TerminalKind { softmax_cross_entropy, mean_squared_error, quadratic };

/// Terminal task loss evaluated on the final state of a batch.
class TerminalLoss {
 public:
  static TerminalLoss cross_entropy(std::vector<int> labels);
  /// Mean over outputs of the squared error.
  static TerminalLoss mean_squared(Matrix targets);
  /// ½ (x - y)ᵀ Q (x - y).
  static TerminalLoss quadratic(Matrix weight, Matrix targets);

  TerminalKind kind() const { return kind_; }
  /// Batch mean of the per-sample loss.
  double value(const Matrix& x) const;
  /// Per-sample loss gradients divided by the batch size.
  Matrix gradient(const Matrix& x) const;
  /// Batch mean of the per-sample Hessians (exact for every kind).
  Matrix hessian(const Matrix& x) const;
  const std::vector<int>& labels() const { return labels_; }

 private:
  TerminalKind kind_ = TerminalKind::quadratic;
  std::vector<int> labels_;
  Matrix targets_;
  Matrix weight_;
};

/// How the group objective counts a task shared by all players.
enum class GroupTerminal { shared_once, per_player_sum };

struct CostModel {
  TerminalLoss terminal;
  double weight_decay = 0.0;
  /// Optional per (stage, slot) weight decay; overrides weight_decay when set.
  std::function<double(int, int)> decay_at;
  GroupTerminal group = GroupTerminal::shared_once;

  double decay(int t, int slot) const { return decay_at ? decay_at(t, slot) : weight_decay; }
  double group_weight(int players) const { return group == GroupTerminal::per_player_sum ? players : 1.0; }
  /// Σ_t Σ_n (c/2)‖θ_{t,n}‖².
  double stage_value(const Linearization& lin, const Vector& params) const;
};

struct OlneResult {
  std::vector<Matrix> costates;                // per stage, one column per sample
  std::vector<std::vector<Vector>> gradients;  // [t][player]
  Vector costate(int t) const { return costates.at(t).rowwise().sum(); }
};

/// Co-states and Hamiltonian parameter gradients. Every player sees the shared task.
OlneResult olne_backward(const Linearization& lin, const Vector& params, const CostModel& cost);
/// Joint co-states of the group Hamiltonian.
OlneResult group_olne_backward(const Linearization& lin, const Vector& params, const CostModel& cost);

enum class GainMode { olne, fne, gr };

/// Feedback gain K, stored densely or as the product L Rᵀ.
class FeedbackGain {
 public:
  FeedbackGain() = default;
  FeedbackGain(Matrix dense) : dense_(std::move(dense)) {}
  /// `left_gram`, when given, is Lᵀ L (used for the norm).
  static FeedbackGain factored(Matrix left, Matrix right, Matrix left_gram = {});

  bool empty() const { return dense_.size() == 0 && left_.size() == 0; }
  bool is_factored() const { return left_.size() > 0; }
  Eigen::Index rows() const { return is_factored() ? left_.rows() : dense_.rows(); }
  Eigen::Index cols() const { return is_factored() ? right_.rows() : dense_.cols(); }
  Vector apply(const Vector& dx) const;
  Vector apply_transpose(const Vector& g) const;
  double squared_norm() const;
  /// The dense matrix; throws for a factored gain.
  const Matrix& matrix() const;
  Matrix materialize() const;

 private:
  Matrix dense_;
  Matrix left_, right_, left_gram_;
};

struct StageGains {
  std::vector<Vector> open;            // per actionable player
  std::vector<FeedbackGain> feedback;  // per actionable player, empty when not computed
};

struct GainSchedule {
  GainMode mode = GainMode::olne;
  std::vector<StageGains> stages;
};

/// Quadratic value model around the nominal state.
struct LocalValue {
  Matrix first;   // per-sample first derivatives, columns sum to the batch derivative
  Matrix second;  // batch-mean second derivative
  Vector gradient() const { return first.rowwise().sum(); }
  bool empty() const { return first.size() == 0; }
};

/// Own-curvature treatment of a player's parameter block.
class CurvatureModel {
 public:
  struct PairProblem {
    Vector gu, gv;
    Matrix gux, gvx;
  };
  struct PairSolution {
    Vector ku, kv;
    Matrix Ku, Kv;
  };

  virtual ~CurvatureModel() = default;
  /// Builds player p's block at stage t from the next-stage value.
  virtual void prepare(const LinearizedStage& stage, int t, int p, double decay, const Matrix& vx_next,
                       const Matrix& vxx_next) = 0;
  /// Sees player p's gradient once per backward pass and returns the vector the open gain solves for.
  virtual Vector observe(int /*p*/, const Vector& g) { return g; }
  virtual Vector solve_open(int p, const Vector& g) = 0;
  virtual Matrix solve_feedback(int p, const Matrix& gx) = 0;
  /// Solves for the per-sample rank-one directions vec(c_b a_bᵀ) (row-major out x fan).
  /// Fills `gram` with the Gram matrix of the solutions when it is cheap to get.
  virtual Matrix solve_outer(int p, const Matrix& c, const Matrix& a, Matrix* gram);
  /// Explicit block, for joint solves.
  virtual Matrix block(int p) = 0;
  /// Factorized cooperative solve of a two-player stage; false when unsupported.
  virtual bool solve_pair(const LinearizedStage& /*stage*/, int /*t*/, int /*u*/, int /*v*/,
                          const PairProblem& /*problem*/, PairSolution& /*out*/) {
    return false;
  }
  virtual int singular_events() const { return 0; }
  /// Cooperative solves that fell back to independent ones.
  virtual int fallback_events() const { return 0; }
};

/// Q_θθ = mean F_θᵀ V_xx F_θ + ℓ_θθ, solved by damped pseudo-inverse.
class ExactCurvature : public CurvatureModel {
 public:
  explicit ExactCurvature(double damping = 0.0, double rel_tol = 1e-9) : damping_(damping), rel_tol_(rel_tol) {}
  void prepare(const LinearizedStage& stage, int t, int p, double decay, const Matrix& vx_next,
               const Matrix& vxx_next) override;
  Vector solve_open(int p, const Vector& g) override;
  Matrix solve_feedback(int p, const Matrix& gx) override;
  Matrix block(int p) override;
  int singular_events() const override { return singular_; }

 private:
  double damping_;
  double rel_tol_;
  std::vector<Matrix> blocks_;
  std::vector<SymmetricInverse> inverses_;
  int singular_ = 0;
};

/// Q_θθ = I / scale. With scale equal to the learning rate the open gain is the scaled gradient.
class IdentityCurvature : public CurvatureModel {
 public:
  explicit IdentityCurvature(double scale = 1.0) : scale_(scale) {}
  void prepare(const LinearizedStage& stage, int t, int p, double, const Matrix&, const Matrix&) override;
  Vector solve_open(int, const Vector& g) override { return scale_ * g; }
  Matrix solve_feedback(int, const Matrix& gx) override { return scale_ * gx; }
  Matrix block(int p) override;

 private:
  double scale_;
  std::vector<int> sizes_;
};

enum class Coupling { exact, none };

struct BackwardOptions {
  double damping = 0.0;  // added before inverting Schur complements and joint systems
  double rel_tol = 1e-9;
  bool zero_feedback = false;  // Q_θx := 0
  Coupling coupling = Coupling::exact;
  bool first_stage_feedback = true;
  bool initial_value = true;  // also produce the stage-0 value
  /// State curvature as the per-sample outer product of the value gradient. Cross terms use the
  /// same per-sample pairing, and feedback gains of uncoupled players stay factored.
  bool sample_gauss_newton = false;
  /// Replaces each propagated second derivative (state-curvature approximation).
  std::function<Matrix(const Matrix& second, const Matrix& first)> compress;
};

struct BackwardStats {
  int singular = 0;
  int fallbacks = 0;
};

struct FneResult {
  GainSchedule gains;
  std::vector<std::vector<LocalValue>> values;  // [t][slot], t = 0..T
  BackwardStats stats;
};

struct GrResult {
  GainSchedule gains;
  std::vector<LocalValue> values;  // t = 0..T
  BackwardStats stats;
};

FneResult fne_backward(const Linearization& lin, const Vector& params, const CostModel& cost,
                       CurvatureModel& curvature, const BackwardOptions& options = {});

GrResult gr_backward(const Linearization& lin, const Vector& params, const CostModel& cost,
                     CurvatureModel& curvature, const BackwardOptions& options = {});

/// One-shot gain schedule from OLNE gradients: k = H_θ, K = 0.
GainSchedule olne_gains(const OlneResult& olne);

struct FeedbackResult {
  Vector params;
  std::vector<Matrix> states;  // updated trajectory x'_0 .. x'_T
};

/// Applies θ ← θ - step (k + K δx_t) stage by stage along the re-propagated batch.
FeedbackResult feedback_forward(const StageDynamics& dynamics, const Vector& params, const GainSchedule& gains,
                                const std::vector<Matrix>& states, double step);

}  // namespace dgnopt
