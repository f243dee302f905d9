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

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dgnopt/game_core.hpp"

namespace dgnopt {

enum class PreconditionKind { identity, rmsprop, adam, gauss_newton, kfac, ekfac, cooperative_kfac, exact };

const char* to_string(PreconditionKind kind);
PreconditionKind parse_precondition(const std::string& name);

struct PreconditionPolicy {
  PreconditionKind kind = PreconditionKind::identity;
  double damping = 1e-3;
  double ema_decay = 0.95;
  int update_period = 10;
  double beta1 = 0.9;  // Adam
  double beta2 = 0.999;
  /// Cooperative factors whose Schur complements exceed this condition number are not trusted.
  double max_condition = 1e8;

  bool operator==(const PreconditionPolicy&) const = default;
};

/// Second moments of a dense layer's augmented inputs (A) and output derivatives (B).
struct KroneckerFactors {
  Matrix A;
  Matrix B;
  bool initialized() const { return A.size() > 0; }
  /// EMA update from a batch; the first update takes the batch moments as they are.
  void update(const Matrix& inputs, const Matrix& derivs, double decay);
};

/// Factors of a cooperating pair: diagonal blocks per player and the cross moments.
struct PairFactors {
  KroneckerFactors u;
  KroneckerFactors v;
  Matrix A_uv;  // E[z_u z_vᵀ]
  Matrix B_uv;  // E[g_u g_vᵀ]
  void update(const Matrix& zu, const Matrix& zv, const Matrix& gu, const Matrix& gv, double decay);
};

/// vec_r((B + √λ I)⁻¹ G (A + √λ I)⁻¹) for the row-major gradient G of shape out x fan.
Vector kfac_solve(const KroneckerFactors& f, const Vector& g, double damping);

/// Cooperative open gain of player u:
/// B̃⁻¹ (G_u + B_uv (B_vv⁻¹ G_v A_vv⁻¹) A_uvᵀ) Ã⁻¹ with factor-wise Schur complements.
/// The diagonal factors carry √λ damping.
Vector cooperative_kfac_solve(const PairFactors& f, const Vector& gu, const Vector& gv, double damping,
                              double* condition = nullptr);
/// Same with the roles of the players exchanged.
PairFactors swapped(const PairFactors& f);

enum class StateCurvatureMode { full, gauss_newton, top_eigen };

struct StateCurvatureApprox {
  StateCurvatureMode mode = StateCurvatureMode::full;
  int rank = 8;
  bool operator==(const StateCurvatureApprox&) const = default;
};

/// Replacement for a propagated state curvature. `first` holds the per-sample first
/// derivatives (columns summing to the batch derivative) used by the Gauss-Newton form.
Matrix compress_state_curvature(const Matrix& second, const StateCurvatureApprox& approx,
                                const Matrix& first = Matrix());

/// Inverse of a damped Kronecker factor: Cholesky when positive definite, else the pseudo-inverse.
class FactorInverse {
 public:
  FactorInverse() = default;
  explicit FactorInverse(const Matrix& m);
  Matrix solve(const Matrix& rhs) const;
  bool empty() const { return size_ == 0; }
  bool singular() const { return fallback_; }

 private:
  Eigen::LLT<Matrix> llt_;
  SymmetricInverse pinv_;
  bool fallback_ = false;
  Eigen::Index size_ = 0;
};

/// Preconditioners for every player of a staged network, with amortized state keyed by layer.
///
/// Blocks are M / lr so that solves return lr M⁻¹ g and the game's feedback pass
/// applies them at unit step.
class PreconditionerBank : public CurvatureModel {
 public:
  PreconditionerBank(PreconditionPolicy policy, double learning_rate);

  const PreconditionPolicy& policy() const { return policy_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

  /// Layer keys of the actionable players, keys[t][p], and their slots. State of a
  /// key whose (stage, slot) coordinates changed since the last bind is dropped.
  void bind(const std::vector<std::vector<int>>& keys, const std::vector<std::vector<int>>& slots);
  int invalidations() const { return invalidations_; }

  void prepare(const LinearizedStage& stage, int t, int p, double decay, const Matrix& vx_next,
               const Matrix& vxx_next) override;
  Vector observe(int p, const Vector& g) override;
  Vector solve_open(int p, const Vector& g) override;
  Matrix solve_feedback(int p, const Matrix& gx) override;
  Matrix solve_outer(int p, const Matrix& c, const Matrix& a, Matrix* gram) override;
  Matrix block(int p) override;
  bool solve_pair(const LinearizedStage& stage, int t, int u, int v, const PairProblem& problem,
                  PairSolution& out) override;
  int singular_events() const override { return singular_; }
  int fallback_events() const override { return fallbacks_; }

  /// Amortized factors of a layer key, for inspection.
  const KroneckerFactors* factors(int key) const;

 private:
  struct LayerState {
    int stage = -1;
    int slot = -1;
    int updates = 0;
    int observations = 0;
    int out = 0;
    int fan = 0;
    Vector second_moment;  // rmsprop, adam
    Vector first_moment;   // adam
    KroneckerFactors factors;
    FactorInverse a_inv, b_inv;
    Matrix a_basis, b_basis, scales;  // ekfac
    Matrix samples;                   // gauss-newton per-sample gradients
    Matrix exact;                     // exact block
    SymmetricInverse exact_inv;
  };
  struct Current {
    int key = 0;
    const KroneckerView* view = nullptr;
    Matrix derivs;  // per-sample output derivatives of the player
  };

  int key_of(int t, int p) const;
  LayerState& state(int p);
  const LayerState& state(int p) const;
  Vector apply(int p, const Vector& g) const;
  void refresh(LayerState& s);

  PreconditionPolicy policy_;
  double lr_;
  std::vector<std::vector<int>> keys_;
  std::map<int, LayerState> states_;
  std::map<std::pair<int, int>, PairFactors> pairs_;
  std::vector<Current> current_;
  int stage_ = -1;
  int singular_ = 0;
  int fallbacks_ = 0;
  int invalidations_ = 0;
};

}  // namespace dgnopt
