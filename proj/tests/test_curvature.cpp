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

#include "dgnopt/curvature.hpp"
#include "dgnopt/error.hpp"
#include "dgnopt/game_core.hpp"
#include "support.hpp"

using namespace dgnopt;
using dgnopt::testing::random_matrix;
using dgnopt::testing::random_vector;

namespace {

Matrix shifted(Matrix m, double s) {
  m.diagonal().array() += s;
  return m;
}

/// A linearized chain together with the bank bindings of its layers.
struct ChainFixture {
  NetworkGraph graph = make_chain(3, {4, 5, 2});
  StagedGame game{graph, canonical_alignment(graph)};
  Vector params = he_uniform_init(graph, 1);
  Linearization lin = game.linearize(params, game.forward(params, random_matrix(3, 6, 2)));

  void bind(PreconditionerBank& bank) const {
    std::vector<std::vector<int>> keys(game.horizon()), slots(game.horizon());
    for (int t = 0; t < game.horizon(); ++t)
      for (const PlayerInfo& p : game.stage_players(t)) {
        keys[t].push_back(t);
        slots[t].push_back(p.slot);
      }
    bank.bind(keys, slots);
  }
  Matrix next_first(int t, std::uint64_t seed) const { return random_matrix(lin.stages[t]->next_dim(), 6, seed, 0.3); }
};

}  // namespace

TEST_CASE("Kronecker factors take the first batch as is and then average") {
  const Matrix z = random_matrix(4, 5, 3), g = random_matrix(2, 5, 4);
  KroneckerFactors f;
  f.update(z, g, 0.9);
  CHECK(relative_error(f.A, Matrix(z * z.transpose() / 5.0)) < 1e-14);
  CHECK(relative_error(f.B, Matrix(g * g.transpose() / 5.0)) < 1e-14);
  const Matrix z2 = random_matrix(4, 5, 5), g2 = random_matrix(2, 5, 6);
  f.update(z2, g2, 0.9);
  CHECK(relative_error(f.A, Matrix(0.9 * z * z.transpose() / 5.0 + 0.1 * z2 * z2.transpose() / 5.0)) < 1e-14);
}

TEST_CASE("damped Kronecker solve inverts the factor product") {
  KroneckerFactors f;
  f.update(random_matrix(4, 3, 7), random_matrix(3, 3, 8), 0.95);
  const Vector g = random_vector(12, 9);
  const double damping = 0.04;
  const Matrix dense = kron(shifted(f.B, 0.2), shifted(f.A, 0.2));
  CHECK(relative_error(kfac_solve(f, g, damping), Vector(dense.ldlt().solve(g))) < 1e-12);
}

TEST_CASE("cooperative solve reduces to the plain solve without cross moments") {
  PairFactors f;
  f.update(random_matrix(3, 4, 10), random_matrix(2, 4, 11), random_matrix(2, 4, 12), random_matrix(3, 4, 13), 0.9);
  f.A_uv.setZero();
  f.B_uv.setZero();
  const Vector gu = random_vector(6, 14), gv = random_vector(6, 15);
  CHECK(relative_error(cooperative_kfac_solve(f, gu, gv, 0.1), kfac_solve(f.u, gu, 0.1)) < 1e-12);
  const PairFactors s = swapped(f);
  CHECK(relative_error(cooperative_kfac_solve(s, gv, gu, 0.1), kfac_solve(f.v, gv, 0.1)) < 1e-12);
}

TEST_CASE("factor inverse uses Cholesky and falls back on singular input") {
  const Matrix l = random_matrix(4, 4, 16);
  const Matrix spd = shifted(l * l.transpose(), 0.1);
  const FactorInverse inv(spd);
  CHECK_FALSE(inv.singular());
  const Matrix rhs = random_matrix(4, 2, 17);
  CHECK(relative_error(inv.solve(rhs), Matrix(spd.ldlt().solve(rhs))) < 1e-12);
  Matrix rank_one = random_matrix(4, 1, 18);
  rank_one = rank_one * rank_one.transpose();
  const FactorInverse fallback(rank_one);
  CHECK(fallback.singular());
  CHECK(relative_error(fallback.solve(rhs), pinv_sym(rank_one) * rhs) < 1e-10);
  CHECK(FactorInverse().empty());
}

TEST_CASE("state curvature approximations") {
  const Matrix l = random_matrix(6, 6, 19);
  const Matrix sym = symmetrized(l + l.transpose());
  StateCurvatureApprox top{StateCurvatureMode::top_eigen, 2};
  const Matrix low = compress_state_curvature(sym, top);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(low);
  CHECK(eig.eigenvalues().minCoeff() > -1e-12);
  int rank = 0;
  for (int i = 0; i < 6; ++i) rank += eig.eigenvalues()(i) > 1e-10;
  CHECK(rank <= 2);
  const Matrix psd = l * l.transpose();
  CHECK(relative_error(compress_state_curvature(psd, {StateCurvatureMode::top_eigen, 6}), psd) < 1e-12);
  const Matrix first = random_matrix(6, 4, 20);
  CHECK(relative_error(compress_state_curvature(sym, {StateCurvatureMode::gauss_newton, 0}, first),
                       Matrix(4.0 * first * first.transpose())) < 1e-14);
  CHECK(compress_state_curvature(sym, {}) == sym);
}

TEST_CASE("every preconditioner's block is consistent with its solve") {
  const ChainFixture fx;
  for (PreconditionKind kind : {PreconditionKind::identity, PreconditionKind::rmsprop, PreconditionKind::adam,
                                PreconditionKind::gauss_newton, PreconditionKind::kfac, PreconditionKind::ekfac,
                                PreconditionKind::exact}) {
    PreconditionPolicy policy;
    policy.kind = kind;
    policy.damping = 0.05;
    policy.update_period = 1;
    PreconditionerBank bank(policy, 0.3);
    fx.bind(bank);
    for (int t = 0; t < fx.lin.horizon(); ++t) {
      const LinearizedStage& stage = *fx.lin.stages[t];
      const Matrix vx = fx.next_first(t, 30 + t);
      const Matrix vxx = [&] {
        const Matrix r = random_matrix(stage.next_dim(), stage.next_dim(), 40 + t);
        return Matrix(r * r.transpose());
      }();
      bank.prepare(stage, t, 0, 1e-3, vx, vxx);
      const Vector g = random_vector(stage.players()[0].size, 50 + t);
      const Vector target = bank.observe(0, g);
      const Vector k = bank.solve_open(0, target);
      INFO(to_string(kind) << " stage " << t);
      CHECK(relative_error(Matrix(bank.block(0) * k), target) < 1e-9);

      const int out = stage.kronecker(0)->out_dim;
      const int fan = static_cast<int>(stage.kronecker(0)->inputs->rows());
      const Matrix c = random_matrix(out, 3, 60 + t), a = random_matrix(fan, 3, 70 + t);
      Matrix gram;
      const Matrix fast = bank.solve_outer(0, c, a, &gram);
      CHECK(relative_error(fast, bank.solve_feedback(0, outer_columns(c, a))) < 1e-10);
      if (gram.size() > 0) CHECK(relative_error(gram, Matrix(fast.transpose() * fast)) < 1e-10);
    }
  }
}

TEST_CASE("Kronecker solves need refreshed factors") {
  PreconditionPolicy policy;
  policy.kind = PreconditionKind::kfac;
  PreconditionerBank bank(policy, 0.1);
  const ChainFixture fx;
  fx.bind(bank);
  CHECK_THROWS_AS(bank.solve_open(0, Vector::Zero(16)), Error);
  policy.ema_decay = 1.0;
  CHECK_THROWS_AS(PreconditionerBank(policy, 0.1), Error);
}

TEST_CASE("per-sample Gauss-Newton feedback gains match the dense pairing formula") {
  const ChainFixture fx;
  CostModel cost;
  cost.terminal = TerminalLoss::cross_entropy({0, 1, 1, 0, 1, 0});
  cost.weight_decay = 0.01;
  BackwardOptions options;
  options.sample_gauss_newton = true;
  const int B = fx.lin.batch();
  for (int which = 0; which < 2; ++which) {
    IdentityCurvature identity(0.7);
    ExactCurvature exact(0.01);
    CurvatureModel& curvature = which == 0 ? static_cast<CurvatureModel&>(identity) : exact;
    const FneResult fne = fne_backward(fx.lin, fx.params, cost, curvature, options);
    for (int t = 1; t < fx.lin.horizon(); ++t) {
      const LinearizedStage& stage = *fx.lin.stages[t];
      const auto dense = materialize(stage);
      const LocalValue& next = fne.values[t + 1][stage.players()[0].slot];
      Matrix cross = Matrix::Zero(stage.players()[0].size, stage.state_dim());
      for (int b = 0; b < B; ++b) {
        const Vector u = B * next.first.col(b);
        cross += dense->param_jacobian(0, b).transpose() * u * (dense->state_jacobian(b).transpose() * u).transpose() / B;
      }
      Matrix expected;
      if (which == 0) {
        expected = 0.7 * cross;
      } else {
        Matrix block = stage.param_gram(0, 0, next.second);
        block.diagonal().array() += cost.weight_decay;
        expected = SymmetricInverse(block, 0.01).solve(cross);
      }
      INFO("curvature " << which << " stage " << t);
      const FeedbackGain& K = fne.gains.stages[t].feedback[0];
      CHECK(relative_error(K.materialize(), expected) < 1e-10);
      CHECK(K.squared_norm() == doctest::Approx(expected.squaredNorm()).epsilon(1e-9));
      const Vector dx = random_vector(stage.state_dim(), 80 + t);
      CHECK(relative_error(K.apply(dx), Vector(expected * dx)) < 1e-10);
      const Vector g = random_vector(stage.players()[0].size, 90 + t);
      CHECK(relative_error(K.apply_transpose(g), Vector(expected.transpose() * g)) < 1e-10);
      if (t + 1 < fx.lin.horizon())
        CHECK(relative_error(next.second, Matrix(B * next.first * next.first.transpose())) < 1e-12);
    }
  }
}
