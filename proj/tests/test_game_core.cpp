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

#include "dgnopt/game_core.hpp"
#include "dgnopt/error.hpp"
#include "support.hpp"

using namespace dgnopt;
using dgnopt::testing::fd_stage;
using dgnopt::testing::kink_safe_input;
using dgnopt::testing::micro_net;
using dgnopt::testing::random_matrix;
using dgnopt::testing::random_vector;

namespace {

std::vector<int> labels_for(int batch, int classes, std::uint64_t seed) {
  std::vector<int> y(batch);
  for (int b = 0; b < batch; ++b) y[b] = static_cast<int>((seed + 3 * b) % classes);
  return y;
}

}  // namespace

TEST_CASE("terminal losses have consistent gradients and hessians") {
  const Matrix x = random_matrix(4, 3, 1);
  const std::vector<Matrix> targets{random_matrix(4, 3, 2)};
  const Matrix q = [] {
    Matrix l = random_matrix(4, 4, 3);
    return Matrix(l * l.transpose());
  }();
  const std::vector<TerminalLoss> losses{TerminalLoss::cross_entropy({0, 3, 1}), TerminalLoss::mean_squared(targets[0]),
                                         TerminalLoss::quadratic(q, targets[0])};
  for (const TerminalLoss& loss : losses) {
    const Matrix g = loss.gradient(x);
    for (int b = 0; b < 3; ++b) {
      auto f = [&](const Vector& col) {
        Matrix y = x;
        y.col(b) = col;
        return loss.value(y);
      };
      const Vector fd = oracle::fd_gradient(f, x.col(b));
      CHECK(relative_error(g.col(b), fd) < 1e-8);
    }
    // Batch-mean hessian via the mean of per-sample second differences along a shared shift.
    auto shifted = [&](const Vector& d) {
      Matrix y = x;
      y.colwise() += d;
      return loss.value(y);
    };
    const Vector dir = random_vector(4, 9);
    const double fd = oracle::fd_curvature(shifted, Vector::Zero(4), dir);
    CHECK(std::abs(dir.dot(loss.hessian(x) * dir) - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
  }
  CHECK_THROWS_AS(TerminalLoss::cross_entropy({0, 7, 1}).value(x), Error);
}

TEST_CASE("olne gradients match finite differences on micro nets") {
  for (int id = 0; id < 4; ++id) {
    const NetworkGraph graph = micro_net(id, 11 + id);
    const Alignment alignment = canonical_alignment(graph);
    const StagedGame game(graph, alignment);
    const Vector params = he_uniform_init(graph, 5 + id);
    const Matrix x0 = kink_safe_input(game, params, 3, id);
    const std::vector<int> labels = labels_for(3, graph.output_dim(), id);
    CostModel cost;
    cost.terminal = TerminalLoss::cross_entropy(labels);
    cost.weight_decay = 0.01;
    const Trajectory traj = game.forward(params, x0);
    const Linearization lin = game.linearize(params, traj);
    const OlneResult olne = olne_backward(lin, params, cost);
    Vector grad = Vector::Zero(params.size());
    for (int t = 0; t < lin.horizon(); ++t)
      for (std::size_t p = 0; p < lin.stages[t]->players().size(); ++p) {
        const PlayerInfo& info = lin.stages[t]->players()[p];
        grad.segment(info.offset, info.size) = olne.gradients[t][p];
      }
    auto total = [&](const Vector& theta) {
      return cost.terminal.value(dag_forward(graph, theta, x0)) + 0.5 * cost.weight_decay * theta.squaredNorm();
    };
    const Vector fd = oracle::fd_gradient(total, params);
    INFO("net " << id);
    CHECK(relative_error(grad, fd) < 1e-6);
  }
}

TEST_CASE("group rationality with one feedback pass solves linear-quadratic games exactly") {
  for (int seed = 0; seed < 6; ++seed) {
    const int players = 1 + seed % 3;
    const oracle::LinearGame game = oracle::LinearGame::random(1 + seed % 4, players, 3, 2, 100 + seed);
    const Matrix x0 = random_matrix(3, 2, 200 + seed);
    const Vector start = random_vector(game.param_count(), 300 + seed);
    CostModel cost;
    cost.terminal = TerminalLoss::quadratic(game.Q, game.target);
    cost.weight_decay = game.decay;
    const Linearization lin = game.linearize(start, x0);
    ExactCurvature curvature;
    const GrResult gr = gr_backward(lin, start, cost, curvature);
    const FeedbackResult fb = feedback_forward(game, start, gr.gains, lin.states, 1.0);
    const oracle::LqOptimum best = oracle::lq_game_value(game, x0);
    INFO("seed " << seed);
    CHECK(relative_error(fb.params, best.params) < 1e-8);
    CHECK(std::abs(game.cost(fb.params, x0) - best.value) < 1e-8 * std::abs(best.value));
  }
}

TEST_CASE("feedback Nash recursion matches the affine optimal law of single-player linear games") {
  for (int seed = 0; seed < 5; ++seed) {
    const oracle::LinearGame game = oracle::LinearGame::random(4, 1, 3, 2, 400 + seed, false);
    const Matrix x0 = random_matrix(3, 1, 500 + seed);
    const Vector start = random_vector(game.param_count(), 600 + seed);
    CostModel cost;
    cost.terminal = TerminalLoss::quadratic(game.Q, game.target);
    cost.weight_decay = game.decay;
    const Linearization lin = game.linearize(start, x0);
    ExactCurvature curvature;
    const FneResult fne = fne_backward(lin, start, cost, curvature);
    const auto policies = oracle::lq_feedback_nash(game);
    for (int t = 0; t < game.horizon(); ++t) {
      const PlayerInfo info = game.stage_players(t)[0];
      const Vector nominal = start.segment(info.offset, info.size);
      const Vector law = policies[t][0].alpha + policies[t][0].beta * lin.states[t].col(0);
      CHECK(relative_error(nominal - fne.gains.stages[t].open[0], law) < 1e-8);
      CHECK(relative_error(-fne.gains.stages[t].feedback[0].matrix(), policies[t][0].beta) < 1e-8);
    }
  }
}

TEST_CASE("value recursions match the explicitly minimized local quadratic") {
  for (int id = 1; id < 4; ++id) {
    const NetworkGraph graph = micro_net(id, 21 + id);
    const StagedGame game(graph, canonical_alignment(graph));
    const Vector params = he_uniform_init(graph, 31 + id);
    const Matrix x0 = kink_safe_input(game, params, 4, 40 + id);
    CostModel cost;
    cost.terminal = TerminalLoss::cross_entropy(labels_for(4, graph.output_dim(), id));
    cost.weight_decay = 0.5;
    const Trajectory traj = game.forward(params, x0);
    const Linearization lin = game.linearize(params, traj);
    ExactCurvature fne_curv, gr_curv;
    const FneResult fne = fne_backward(lin, params, cost, fne_curv);
    const GrResult gr = gr_backward(lin, params, cost, gr_curv);

    auto check = [&](int t, const LocalValue& value, const LocalValue& next, std::vector<int> chosen) {
      const testing::FdStage fd = fd_stage(game, t, lin.states[t], params);
      oracle::LocalStageModel model;
      model.fx = fd.fx;
      model.ftheta = fd.ftheta;
      for (const PlayerInfo& p : lin.stages[t]->players()) model.theta.push_back(params.segment(p.offset, p.size));
      model.next_first = next.first;
      model.next_second = next.second;
      model.decay = cost.weight_decay;
      model.chosen = std::move(chosen);
      auto f = [&](const Vector& dx) { return model.minimum(dx); };
      const int d = lin.stages[t]->state_dim();
      const Vector zero = Vector::Zero(d);
      const Vector grad = value.gradient();
      Vector slope(20), slope_fd(20), curv(20), curv_fd(20);
      for (int k = 0; k < 20; ++k) {
        const Vector dir = random_vector(d, 1000 * t + k).normalized();
        slope(k) = grad.dot(dir);
        slope_fd(k) = (f(1e-3 * dir) - f(-1e-3 * dir)) / 2e-3;
        curv(k) = dir.dot(value.second * dir);
        curv_fd(k) = oracle::fd_curvature(f, zero, dir);
      }
      CHECK(relative_error(slope, slope_fd) < 1e-5);
      CHECK(relative_error(curv, curv_fd) < 1e-5);
    };
    for (int t = 0; t < lin.horizon(); ++t) {
      const auto& players = lin.stages[t]->players();
      for (int n = 0; n < lin.players; ++n) {
        if (fne.values[t][n].empty()) continue;
        std::vector<int> own;
        for (int p = 0; p < static_cast<int>(players.size()); ++p)
          if (players[p].slot == n) own.push_back(p);
        INFO("fne net " << id << " stage " << t << " slot " << n);
        check(t, fne.values[t][n], fne.values[t + 1][n], own);
      }
      std::vector<int> all(players.size());
      for (std::size_t p = 0; p < players.size(); ++p) all[p] = static_cast<int>(p);
      INFO("gr net " << id << " stage " << t);
      check(t, gr.values[t], gr.values[t + 1], all);
    }
  }
}

TEST_CASE("without cross coupling a group stage solve equals the feedback Nash stage solve") {
  const oracle::LinearGame game = oracle::LinearGame::random(1, 3, 4, 2, 77);
  const Matrix x0 = random_matrix(4, 3, 78);
  const Vector start = random_vector(game.param_count(), 79);
  CostModel cost;
  cost.terminal = TerminalLoss::quadratic(game.Q, game.target);
  cost.weight_decay = game.decay;
  const Linearization lin = game.linearize(start, x0);
  ExactCurvature a, b;
  BackwardOptions options;
  options.coupling = Coupling::none;
  const GrResult gr = gr_backward(lin, start, cost, a, options);
  const FneResult fne = fne_backward(lin, start, cost, b);
  for (int p = 0; p < 3; ++p) {
    CHECK((gr.gains.stages[0].open[p] - fne.gains.stages[0].open[p]).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((gr.gains.stages[0].feedback[p].matrix() - fne.gains.stages[0].feedback[p].matrix()).cwiseAbs().maxCoeff() < 1e-10);
  }
}
