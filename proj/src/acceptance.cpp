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

#include "dgnopt/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <unistd.h>

#include <Eigen/LU>

#include "dgnopt/bandit.hpp"
#include "dgnopt/error.hpp"
#include "dgnopt/harness.hpp"
#include "dgnopt/oracle.hpp"

namespace dgnopt::acceptance {
namespace {

using oracle::kink_safe_input;
using oracle::micro_net;
using oracle::random_matrix;
using oracle::random_vector;

/// Check counter with the largest observed error.
class Tally {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    if (failures_++ < 4) notes_ << (notes_.tellp() > 0 ? "; " : "") << what;
  }
  /// Records err <= tol and tracks the worst err.
  void within(double err, double tol, const std::string& what) {
    worst_ = std::max(worst_, std::isfinite(err) ? err : INFINITY);
    std::ostringstream os;
    os << what << " err " << err;
    expect(err <= tol, os.str());
  }
  void note(const std::string& text) { extra_ << (extra_.tellp() > 0 ? ", " : "") << text; }

  int checks() const { return checks_; }
  int failures() const { return failures_; }
  double worst() const { return worst_; }
  std::string detail() const {
    std::ostringstream os;
    os << checks_ << " checks";
    if (worst_ > 0.0) os << ", worst " << worst_;
    if (!extra_.str().empty()) os << ", " << extra_.str();
    if (failures_ > 0) os << ", " << failures_ << " failed: " << notes_.str();
    return os.str();
  }

 private:
  int checks_ = 0;
  int failures_ = 0;
  double worst_ = 0.0;
  std::ostringstream notes_;
  std::ostringstream extra_;
};

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

double max_abs(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

std::vector<int> labels_for(int batch, int classes, std::uint64_t seed) {
  std::vector<int> y(batch);
  for (int b = 0; b < batch; ++b) y[b] = static_cast<int>((seed + 3 * b) % classes);
  return y;
}

/// Reproducible minibatches drawn with replacement.
class BatchStream {
 public:
  BatchStream(const Split& split, int batch, std::uint64_t seed) : split_(split), batch_(batch), rng_(seed) {}
  Split next() {
    std::uniform_int_distribution<int> pick(0, split_.size() - 1);
    std::vector<int> index(batch_);
    for (int& i : index) i = pick(rng_);
    return split_.subset(index);
  }

 private:
  const Split& split_;
  int batch_;
  std::mt19937_64 rng_;
};

std::vector<PlayerInfo> all_players(const StageDynamics& game) {
  std::vector<PlayerInfo> out;
  for (int t = 0; t < game.horizon(); ++t)
    for (const PlayerInfo& p : game.stage_players(t)) out.push_back(p);
  return out;
}

Vector gather(const Linearization& lin, const OlneResult& olne, Eigen::Index size) {
  Vector grad = Vector::Zero(size);
  for (int t = 0; t < lin.horizon(); ++t)
    for (std::size_t p = 0; p < lin.stages[t]->players().size(); ++p) {
      const PlayerInfo& info = lin.stages[t]->players()[p];
      grad.segment(info.offset, info.size) = olne.gradients[t][p];
    }
  return grad;
}

Vector batch_gradient(const StagedGame& game, const Vector& params, const Matrix& x, const std::vector<int>& y,
                      double decay) {
  CostModel cost;
  cost.terminal = TerminalLoss::cross_entropy(y);
  cost.weight_decay = decay;
  const Linearization lin = game.linearize(params, game.forward(params, x));
  return gather(lin, olne_backward(lin, params, cost), params.size());
}

// 1. Backprop gradients against finite differences.

/// Central difference with one Richardson extrapolation step.
double richardson(const std::function<double(double)>& f, double h) {
  const double coarse = (f(h) - f(-h)) / (2 * h);
  const double fine = (f(h / 2) - f(-h / 2)) / h;
  return (4 * fine - coarse) / 3;
}

Result gradient_oracle() {
  Tally tally;
  constexpr double floor = 1e-4;
  for (int id = 0; id < 10; ++id) {
    const NetworkGraph graph = micro_net(id, 101 + id);
    const StagedGame game(graph, canonical_alignment(graph));
    const Vector params = he_uniform_init(graph, 7 + id);
    const Matrix x0 = kink_safe_input(game, params, 4, 900 + id, 0.05);
    CostModel cost;
    cost.terminal = TerminalLoss::cross_entropy(labels_for(4, graph.output_dim(), id));
    cost.weight_decay = 0.01;
    const Linearization lin = game.linearize(params, game.forward(params, x0));
    const Vector grad = gather(lin, olne_backward(lin, params, cost), params.size());
    double worst = 0.0;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      auto along = [&](double h) {
        Vector theta = params;
        theta(i) += h;
        return cost.terminal.value(dag_forward(graph, theta, x0)) + 0.5 * cost.weight_decay * theta.squaredNorm();
      };
      const double fd = richardson(along, 1e-4);
      worst = std::max(worst, std::abs(grad(i) - fd) / std::max(std::abs(fd), floor));
    }
    tally.within(worst, 1e-6, "net " + std::to_string(id));
    tally.expect(oracle::kink_margin(game, params, x0) >= 1e-3, "kink margin net " + std::to_string(id));
  }
  return {1, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

// 2. Reductions to first-order optimizers.

struct Reference {
  enum Kind { sgd, rmsprop, gauss_newton } kind = sgd;
  double lr = 0.05;
  double decay = 0.0;
  double damping = 1e-3;
  double ema = 0.95;
};

/// Handwritten optimizer step from backprop gradients.
class HandOptimizer {
 public:
  HandOptimizer(const NetworkGraph& graph, Reference ref)
      : game_(graph, canonical_alignment(graph)), blocks_(all_players(game_)), ref_(ref) {}

  void step(Vector& params, const Split& batch) {
    const Vector g = batch_gradient(game_, params, batch.x, batch.y, ref_.decay);
    switch (ref_.kind) {
      case Reference::sgd:
        params -= ref_.lr * g;
        break;
      case Reference::rmsprop:
        if (second_.size() == 0) second_ = Vector::Zero(g.size());
        second_ = ref_.ema * second_ + (1 - ref_.ema) * g.cwiseAbs2();
        params -= ref_.lr * g.cwiseQuotient((second_.cwiseSqrt().array() + ref_.damping).matrix());
        break;
      case Reference::gauss_newton: {
        const int n = batch.size();
        Matrix samples(params.size(), n);
        for (int b = 0; b < n; ++b)
          samples.col(b) = batch_gradient(game_, params, batch.x.col(b), {batch.y[b]}, 0.0);
        Vector delta(params.size());
        for (const PlayerInfo& p : blocks_) {
          const Matrix s = samples.middleRows(p.offset, p.size);
          Matrix m = s * s.transpose() / n;
          m.diagonal().array() += ref_.damping;
          delta.segment(p.offset, p.size) = ref_.lr * m.ldlt().solve(g.segment(p.offset, p.size));
        }
        params -= delta;
        break;
      }
    }
  }

 private:
  StagedGame game_;
  std::vector<PlayerInfo> blocks_;
  Reference ref_;
  Vector second_;
};

OptimizerConfig reduction_config(TrainMode mode, const Reference& ref) {
  OptimizerConfig c;
  c.mode = mode;
  c.lr.base = ref.lr;
  c.weight_decay = ref.decay;
  c.precondition.kind = ref.kind == Reference::sgd       ? PreconditionKind::identity
                        : ref.kind == Reference::rmsprop ? PreconditionKind::rmsprop
                                                         : PreconditionKind::gauss_newton;
  c.precondition.damping = ref.damping;
  c.precondition.ema_decay = ref.ema;
  c.zero_feedback = mode != TrainMode::olne;
  c.coupling = Coupling::none;
  c.seed = 3;
  return c;
}

/// Largest parameter gap between a trainer and the handwritten reference over a run.
double trajectory_drift(const NetworkGraph& graph, const Split& data, TrainMode mode, const Reference& ref,
                        int steps) {
  Trainer trainer(graph, reduction_config(mode, ref));
  HandOptimizer hand(graph, ref);
  Vector params = he_uniform_init(graph, 17);
  trainer.set_params(params);
  BatchStream stream(data, 16, 23);
  double drift = 0.0;
  for (int s = 0; s < steps; ++s) {
    const Split batch = stream.next();
    trainer.step(batch.x, batch.y);
    hand.step(params, batch);
    drift = std::max(drift, max_abs(trainer.params() - params));
    if (!std::isfinite(drift)) return INFINITY;
  }
  return drift;
}

/// Forwards a linearized stage, optionally hiding its players.
class StageView : public LinearizedStage {
 public:
  StageView(const LinearizedStage& base, bool muted) : base_(base), muted_(muted) {}
  int state_dim() const override { return base_.state_dim(); }
  int next_dim() const override { return base_.next_dim(); }
  int batch() const override { return base_.batch(); }
  const std::vector<PlayerInfo>& players() const override { return muted_ ? none_ : base_.players(); }
  Matrix state_jvp(const Matrix& dx) const override { return base_.state_jvp(dx); }
  Matrix state_vjp(const Matrix& g) const override { return base_.state_vjp(g); }
  Matrix param_jvp(int p, const Vector& d) const override { return base_.param_jvp(p, d); }
  Vector param_vjp(int p, const Matrix& g) const override { return base_.param_vjp(p, g); }
  Matrix param_vjp_samples(int p, const Matrix& g) const override { return base_.param_vjp_samples(p, g); }
  Matrix state_gram(const Matrix& m) const override { return base_.state_gram(m); }
  Matrix param_state_gram(int p, const Matrix& m) const override { return base_.param_state_gram(p, m); }
  Matrix param_gram(int p, int q, const Matrix& m) const override { return base_.param_gram(p, q, m); }
  const KroneckerView* kronecker(int p) const override { return muted_ ? nullptr : base_.kronecker(p); }

 private:
  const LinearizedStage& base_;
  bool muted_;
  std::vector<PlayerInfo> none_;
};

Linearization only_stage(const Linearization& lin, int t) {
  Linearization out;
  out.states = lin.states;
  out.players = lin.players;
  for (int s = 0; s < lin.horizon(); ++s) out.stages.push_back(std::make_unique<StageView>(*lin.stages[s], s != t));
  return out;
}

/// Largest gain gap between uncoupled GR and FNE over the listed stages.
double gain_gap(const Linearization& lin, const Vector& params, const CostModel& cost, int t_only) {
  ExactCurvature a, b;
  BackwardOptions options;
  options.coupling = Coupling::none;
  const GrResult gr = gr_backward(lin, params, cost, a, options);
  const FneResult fne = fne_backward(lin, params, cost, b);
  double gap = 0.0;
  for (int t = 0; t < lin.horizon(); ++t) {
    if (t_only >= 0 && t != t_only) continue;
    for (std::size_t p = 0; p < lin.stages[t]->players().size(); ++p) {
      gap = std::max(gap, max_abs(gr.gains.stages[t].open[p] - fne.gains.stages[t].open[p]));
      gap = std::max(gap, max_abs(gr.gains.stages[t].feedback[p].matrix() - fne.gains.stages[t].feedback[p].matrix()));
    }
  }
  return gap;
}

Result reductions() {
  Tally tally;
  SplitSpec split;
  split.val = 50;
  const Split data = split_dataset("blobs", make_blobs(400, 0.6, 5), 2, split).train;
  const std::vector<std::pair<std::string, NetworkGraph>> nets{
      {"chain", make_chain(2, {8, 8, 2})},
      {"residual", make_residual_micro(2, 6, 2, 2, Shortcut::identity)},
      {"inception", make_inception_micro(2, 5, 2)}};

  // (a) FNE with zero cross term and identity curvature, (c) GR without coupling, against SGD.
  for (const auto& [name, graph] : nets) {
    Reference ref;
    ref.decay = 1e-3;
    tally.within(trajectory_drift(graph, data, TrainMode::olne, ref, 100), 1e-10, "olne sgd " + name);
    tally.within(trajectory_drift(graph, data, TrainMode::fne, ref, 100), 1e-10, "fne sgd " + name);
    tally.within(trajectory_drift(graph, data, TrainMode::gr, ref, 100), 1e-10, "gr sgd " + name);
  }

  // (b) Uncoupled GR stage solve equals the FNE stage solve, per stage.
  double multi_stage = 0.0;
  for (int id = 0; id < 8; ++id) {
    const NetworkGraph graph = micro_net(id, 300 + id);
    const StagedGame game(graph, canonical_alignment(graph));
    const Vector params = he_uniform_init(graph, 40 + id);
    const Matrix x0 = random_matrix(graph.input_dim(), 3, 50 + id);
    CostModel cost;
    cost.terminal = TerminalLoss::cross_entropy(labels_for(3, graph.output_dim(), id));
    cost.weight_decay = 0.1;
    const Linearization lin = game.linearize(params, game.forward(params, x0));
    for (int t = 0; t < lin.horizon(); ++t)
      tally.within(gain_gap(only_stage(lin, t), params, cost, t), 1e-10,
                   "net " + std::to_string(id) + " stage " + std::to_string(t));
    multi_stage = std::max(multi_stage, gain_gap(lin, params, cost, -1));
  }
  for (int seed = 0; seed < 12; ++seed) {
    const int slots = seed < 6 ? 3 : 1;
    const oracle::LinearGame game = oracle::LinearGame::random(3, slots, 4, 2, 700 + seed);
    const Matrix x0 = random_matrix(4, 3, 710 + seed);
    const Vector start = random_vector(game.param_count(), 720 + seed);
    CostModel cost;
    cost.terminal = TerminalLoss::quadratic(game.Q, game.target);
    cost.weight_decay = game.decay;
    const Linearization lin = game.linearize(start, x0);
    for (int t = 0; t < lin.horizon(); ++t)
      tally.within(gain_gap(only_stage(lin, t), start, cost, t), 1e-10,
                   "linear game " + std::to_string(seed) + " stage " + std::to_string(t));
    if (slots == 1)
      tally.within(gain_gap(lin, start, cost, -1), 1e-10, "linear game " + std::to_string(seed) + " full recursion");
    else
      multi_stage = std::max(multi_stage, gain_gap(lin, start, cost, -1));
  }
  {
    std::ostringstream os;
    os << "multi-slot full-recursion gap " << multi_stage << " (not asserted)";
    tally.note(os.str());
  }

  // (d) Adaptive-diagonal and Gauss-Newton preconditioners.
  for (const auto& [name, graph] : nets) {
    Reference rms;
    rms.kind = Reference::rmsprop;
    rms.lr = 0.01;
    rms.decay = 1e-3;
    Reference gn;
    gn.kind = Reference::gauss_newton;
    gn.lr = 0.05;
    gn.damping = 0.1;
    gn.decay = 1e-3;
    for (const Reference& ref : {rms, gn}) {
      const std::string tag = std::string(ref.kind == Reference::rmsprop ? "rmsprop " : "gn ") + name;
      tally.within(trajectory_drift(graph, data, TrainMode::olne, ref, 100), 1e-10, "olne " + tag);
      tally.within(trajectory_drift(graph, data, TrainMode::fne, ref, 100), 1e-10, "fne " + tag);
      tally.within(trajectory_drift(graph, data, TrainMode::gr, ref, 100), 1e-10, "gr " + tag);
    }
  }
  return {2, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

// 3. Linear-quadratic games.

Result lq_exactness() {
  Tally tally;
  double worst_action = 0.0, worst_value = 0.0;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const int horizon = 1 + static_cast<int>(rng() % 4);
    const int slots = 1 + static_cast<int>(rng() % 3);
    const int state = 2 + static_cast<int>(rng() % 5);
    const int action = 1 + static_cast<int>(rng() % 3);
    const int batch = 1 + static_cast<int>(rng() % 3);
    const oracle::LinearGame game =
        oracle::LinearGame::random(horizon, slots, state, action, 1000 + seed, rng() % 2 == 0);
    const Matrix x0 = random_matrix(state, batch, 2000 + seed);
    const Vector start = random_vector(game.param_count(), 3000 + seed);
    CostModel cost;
    cost.terminal = TerminalLoss::quadratic(game.Q, game.target);
    cost.weight_decay = game.decay;
    const Linearization lin = game.linearize(start, x0);
    ExactCurvature curvature;
    const GrResult gr = gr_backward(lin, start, cost, curvature);
    const FeedbackResult fb = feedback_forward(game, start, gr.gains, lin.states, 1.0);
    const oracle::LqOptimum best = oracle::lq_game_value(game, x0);
    const double action_err = relative_error(fb.params, best.params);
    const double value_err = std::abs(game.cost(fb.params, x0) - best.value) / std::abs(best.value);
    worst_action = std::max(worst_action, action_err);
    worst_value = std::max(worst_value, value_err);
    tally.within(action_err, 1e-8, "instance " + std::to_string(seed) + " actions");
    tally.within(value_err, 1e-8, "instance " + std::to_string(seed) + " value");
  }
  std::ostringstream os;
  os << "actions " << worst_action << ", value " << worst_value;
  tally.note(os.str());
  return {3, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

// 4. Value recursions against the minimized local quadratic.

Result value_propagation() {
  Tally tally;
  for (int run = 0; run < 8; ++run) {
    const int id = run % 4;
    const NetworkGraph graph = micro_net(id, 60 + run);
    const StagedGame game(graph, canonical_alignment(graph));
    const Vector params = he_uniform_init(graph, 70 + run);
    const Matrix x0 = kink_safe_input(game, params, 4, 80 + run);
    CostModel cost;
    cost.terminal = TerminalLoss::cross_entropy(labels_for(4, graph.output_dim(), run));
    cost.weight_decay = 0.5;
    const Linearization lin = game.linearize(params, game.forward(params, x0));
    ExactCurvature fne_curv, gr_curv;
    const FneResult fne = fne_backward(lin, params, cost, fne_curv);
    const GrResult gr = gr_backward(lin, params, cost, gr_curv);

    auto check = [&](int t, const LocalValue& value, const LocalValue& next, std::vector<int> chosen,
                     const std::string& tag) {
      const oracle::FdStage fd = oracle::fd_stage(game, t, lin.states[t], params);
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
      const Vector grad = value.gradient();
      Vector slope(20), slope_fd(20), curv(20), curv_fd(20);
      for (int k = 0; k < 20; ++k) {
        const Vector dir = random_vector(d, 5000 * run + 100 * t + k).normalized();
        slope(k) = grad.dot(dir);
        slope_fd(k) = richardson([&](double h) { return f(h * dir); }, 1e-3);
        curv(k) = dir.dot(value.second * dir);
        curv_fd(k) = oracle::fd_curvature(f, Vector::Zero(d), dir);
      }
      tally.within(relative_error(slope, slope_fd), 1e-5, tag + " gradient");
      tally.within(relative_error(curv, curv_fd), 1e-5, tag + " curvature");
    };
    for (int t = 0; t < lin.horizon(); ++t) {
      const auto& players = lin.stages[t]->players();
      const std::string where = "net " + std::to_string(run) + " stage " + std::to_string(t);
      for (int n = 0; n < lin.players; ++n) {
        if (fne.values[t][n].empty()) continue;
        std::vector<int> own;
        for (int p = 0; p < static_cast<int>(players.size()); ++p)
          if (players[p].slot == n) own.push_back(p);
        check(t, fne.values[t][n], fne.values[t + 1][n], own, "fne " + where + " slot " + std::to_string(n));
      }
      std::vector<int> every(players.size());
      for (std::size_t p = 0; p < players.size(); ++p) every[p] = static_cast<int>(p);
      check(t, gr.values[t], gr.values[t + 1], every, "gr " + where);
    }
  }
  return {4, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

// 5. Cooperative Kronecker factors at batch size one.

Matrix damped_identity_shift(Matrix m, double shift) {
  m.diagonal().array() += shift;
  return m;
}

Result cooperative_kfac() {
  Tally tally;
  for (int combo = 0; combo < 50; ++combo) {
    std::mt19937_64 rng(combo);
    auto dim = [&] { return 1 + static_cast<int>(rng() % 8); };
    const int out_u = dim(), fan_u = dim(), out_v = dim(), fan_v = dim();
    const double damping = std::pow(10.0, -2.0 + 2.0 * std::uniform_real_distribution<double>()(rng));
    const Matrix zu = random_matrix(fan_u, 1, 10 * combo + 1);
    const Matrix zv = random_matrix(fan_v, 1, 10 * combo + 2);
    const Matrix gu = random_matrix(out_u, 1, 10 * combo + 3);
    const Matrix gv = random_matrix(out_v, 1, 10 * combo + 4);
    const Matrix Gu = random_matrix(out_u, fan_u, 10 * combo + 5);
    const Matrix Gv = random_matrix(out_v, fan_v, 10 * combo + 6);
    PairFactors factors;
    factors.update(zu, zv, gu, gv, 0.95);
    const Matrix solved = unvec_rows(cooperative_kfac_solve(factors, vec_rows(Gu), vec_rows(Gv), damping), out_u, fan_u);

    // Dense reference: the joint Kronecker system over both players' stacked inputs and outputs.
    Matrix z(fan_u + fan_v, 1), g(out_u + out_v, 1);
    z << zu, zv;
    g << gu, gv;
    const double shift = std::sqrt(damping);
    const Matrix a = damped_identity_shift(z * z.transpose(), shift);
    const Matrix b = damped_identity_shift(g * g.transpose(), shift);
    Matrix joint = Matrix::Zero(out_u + out_v, fan_u + fan_v);
    joint.topLeftCorner(out_u, fan_u) = Gu;
    joint.bottomRightCorner(out_v, fan_v) = Gv;
    const Vector x = kron(b, a).fullPivLu().solve(vec_rows(joint));
    const Matrix dense = unvec_rows(x, out_u + out_v, fan_u + fan_v).topLeftCorner(out_u, fan_u);
    tally.within(relative_error(solved, dense), 1e-6, "combo " + std::to_string(combo));
  }
  return {5, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

// 6. MNIST subset.

ExperimentConfig mnist_config() {
  ExperimentConfig c;
  c.network.preset = "residual-micro";
  c.network.width = 64;
  c.network.blocks = 3;
  c.data.name = "mnist";
  c.data.path = "mnist10k";
  c.data.subset = 10000;
  c.data.pool = 2;
  c.data.standardization = Standardization::per_channel;
  c.optimizer.batch_size = 128;
  c.optimizer.max_iterations = 2000;
  return c;
}

ExperimentConfig mnist_gr_config() {
  ExperimentConfig c = mnist_config();
  OptimizerConfig& o = c.optimizer;
  o.mode = TrainMode::gr;
  o.precondition.kind = PreconditionKind::kfac;
  o.precondition.damping = 0.1;
  o.state_curvature.mode = StateCurvatureMode::gauss_newton;
  o.lr.base = 0.1;
  o.lr.milestones = {1500};
  o.weight_decay = 1e-2;
  return c;
}

ExperimentConfig mnist_sgd_config() {
  ExperimentConfig c = mnist_config();
  OptimizerConfig& o = c.optimizer;
  o.mode = TrainMode::olne;
  o.precondition.kind = PreconditionKind::identity;
  o.lr.base = 0.05;
  o.weight_decay = 3e-3;
  return c;
}

double final_test_accuracy(const ExperimentConfig& config, const Dataset& data, std::uint64_t seed) {
  OptimizerConfig o = config.optimizer;
  o.seed = seed;
  const NetworkGraph graph = build_network(config.network, data.features(), data.classes);
  RunOptions options;
  options.log_period = 500;
  options.evaluate_train = false;
  const RunReport report = run_experiment(graph, o, data, options);
  return report.diverged ? 0.0 : report.final_test_acc;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

Result mnist_training() {
  Tally tally;
  const Dataset data = load_dataset(mnist_config().data);
  std::vector<double> gr, sgd;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    gr.push_back(final_test_accuracy(mnist_gr_config(), data, seed));
    sgd.push_back(final_test_accuracy(mnist_sgd_config(), data, seed));
  }
  tally.expect(mean(gr) >= 0.95, "mean GR accuracy " + fixed(mean(gr)) + " < 0.95");
  tally.expect(mean(gr) >= mean(sgd), "GR below SGD");
  tally.note("GR mean " + fixed(mean(gr)) + " min " + fixed(*std::min_element(gr.begin(), gr.end())) +
             ", SGD mean " + fixed(mean(sgd)));
  return {6, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

// 7. Feedback stabilization at a large step.

struct StabilityRun {
  bool stable = false;
  double peak_ratio = 0.0;
};

StabilityRun stability_run(const NetworkGraph& graph, const Dataset& data, OptimizerConfig config) {
  Trainer trainer(graph, config);
  BatchStream stream(data.train, config.batch_size, config.seed + 100);
  const double initial = trainer.loss(data.train);
  StabilityRun run{true, 0.0};
  try {
    for (int i = 0; i < config.max_iterations; ++i) {
      const Split batch = stream.next();
      trainer.step(batch.x, batch.y);
      if (i % 10 != 9) continue;
      const double loss = trainer.loss(data.train);
      run.peak_ratio = std::isfinite(loss) ? std::max(run.peak_ratio, loss / initial) : INFINITY;
      if (!(loss < 10 * initial)) {
        run.stable = false;
        return run;
      }
    }
  } catch (const Error&) {
    run.stable = false;
    run.peak_ratio = INFINITY;
  }
  return run;
}

OptimizerConfig stability_config() {
  OptimizerConfig o;
  o.mode = TrainMode::fne;
  o.precondition.kind = PreconditionKind::kfac;
  o.precondition.damping = 0.1;
  o.state_curvature.mode = StateCurvatureMode::gauss_newton;
  o.lr.base = 1.0;  // ten times the tuned 0.1
  o.batch_size = 64;
  o.max_iterations = 500;
  o.guard_halvings = 0;
  return o;
}

Result feedback_stabilization() {
  Tally tally;
  const Dataset data = split_dataset("moons", make_moons(2000, 0.2, 11), 2, {});
  const NetworkGraph graph = make_inception_micro(2, 8, 2);
  int with_feedback = 0, without_feedback = 0;
  std::ostringstream peaks;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    OptimizerConfig o = stability_config();
    o.seed = seed;
    const StabilityRun on = stability_run(graph, data, o);
    o.apply_feedback = false;
    const StabilityRun off = stability_run(graph, data, o);
    with_feedback += on.stable;
    without_feedback += !off.stable;
    auto ratio = [](double r) { return r < 1e3 ? fixed(r, 2) : std::string(">1e3"); };
    peaks << (seed ? " " : "") << ratio(on.peak_ratio) << "/" << ratio(off.peak_ratio);
  }
  tally.expect(with_feedback >= 5, "feedback runs stable on " + std::to_string(with_feedback) + "/6");
  tally.expect(without_feedback >= 5, "K = 0 runs blew up on " + std::to_string(without_feedback) + "/6");
  tally.note("stable with K " + std::to_string(with_feedback) + "/6, unstable without " +
             std::to_string(without_feedback) + "/6, peak loss ratios " + peaks.str());
  return {7, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

// 8. Fictitious players.

struct ThresholdRun {
  int iterations = -1;  // first iteration reaching the threshold; -1 if never
  bool equivalent = true;
};

ThresholdRun threshold_run(const NetworkGraph& graph, const Dataset& data, OptimizerConfig config) {
  Trainer trainer(graph, config);
  BatchStream stream(data.train, config.batch_size, config.seed + 200);
  ThresholdRun run;
  for (int i = 1; i <= config.max_iterations; ++i) {
    const Split batch = stream.next();
    trainer.step(batch.x, batch.y);
    if (i % 10 == 0) {
      const Matrix staged = trainer.game(0).forward(trainer.params(), data.val.x).states.back();
      run.equivalent = run.equivalent && (staged.array() == trainer.predict(data.val.x).array()).all();
    }
    if (run.iterations < 0 && trainer.accuracy(data.val) >= 0.95) {
      run.iterations = i;
      break;
    }
  }
  return run;
}

Result fictitious_players() {
  Tally tally;
  const Dataset data = split_dataset("moons", make_moons(2000, 0.15, 21), 2, {});
  const NetworkGraph graph = make_chain(2, {16, 16, 2});
  int wins = 0;
  std::ostringstream its;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    OptimizerConfig o;
    o.mode = TrainMode::gr;
    o.precondition.kind = PreconditionKind::identity;
    o.lr.base = 0.05;
    o.batch_size = 32;
    o.max_iterations = 5000;
    o.seed = seed;
    const ThresholdRun one = threshold_run(graph, data, o);
    o.players_split = 2;
    const ThresholdRun two = threshold_run(graph, data, o);
    wins += two.iterations > 0 && (one.iterations < 0 || two.iterations <= one.iterations);
    tally.expect(two.equivalent, "split inference differs, seed " + std::to_string(seed));
    its << (seed ? " " : "") << one.iterations << "/" << two.iterations;
  }
  tally.expect(wins >= 5, "N=2 no slower on " + std::to_string(wins) + "/6");
  tally.note("iterations to 95% N=1/N=2 " + its.str());
  return {8, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

// 9. EXP3++.

Result bandit() {
  Tally tally;
  {
    Exp3pp bandit(5, 7);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst_sum = 0.0, worst_floor = 0.0;
    bool draws_match = true;
    for (int round = 0; round < 100000; ++round) {
      const std::vector<double> p = bandit.probabilities();
      const std::vector<double> eps = bandit.floors();
      double sum = 0.0;
      for (std::size_t m = 0; m < p.size(); ++m) {
        sum += p[m];
        worst_floor = std::max(worst_floor, eps[m] - p[m]);
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      const Exp3pp::Draw draw = bandit.sample();
      draws_match = draws_match && draw.probability == p[draw.arm];
      // Arm quality drifts over time so that no arm dominates throughout.
      const double mean_reward = 0.5 + 0.4 * std::sin(0.001 * round + draw.arm);
      bandit.update(draw.arm, unit(rng) < mean_reward ? 1.0 : 0.0);
    }
    tally.within(worst_sum, 1e-12, "distribution sum");
    tally.expect(worst_floor <= 0.0, "floor violated by " + std::to_string(worst_floor));
    tally.expect(draws_match, "draw probability differs from the distribution");
  }
  {
    Exp3pp bandit(2, 11);
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int best = 0;
    for (int round = 0; round < 10000; ++round) {
      const Exp3pp::Draw draw = bandit.sample();
      const double p = draw.arm == 0 ? 0.9 : 0.4;
      bandit.update(draw.arm, unit(rng) < p ? 1.0 : 0.0);
      if (round >= 8000) best += draw.arm == 0;
    }
    const double fraction = best / 2000.0;
    tally.expect(fraction >= 0.8, "best-arm fraction " + fixed(fraction));
    tally.note("best-arm fraction " + fixed(fraction, 3));
  }
  return {9, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

// 10. Adaptive alignment.

Result adaptive_alignment() {
  Tally tally;
  DataSpec spec;
  spec.name = "moons";
  spec.samples = 2000;
  spec.noise = 0.3;
  const Dataset data = load_dataset(spec);
  NetworkSpec net;
  net.width = 16;
  net.blocks = 3;
  const NetworkGraph graph = build_network(net, data.features(), data.classes);
  std::vector<double> adaptive, fixed_acc;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    OptimizerConfig o;
    o.mode = TrainMode::gr;
    o.precondition.kind = PreconditionKind::kfac;
    o.precondition.damping = 0.1;
    o.state_curvature.mode = StateCurvatureMode::gauss_newton;
    o.lr.base = 0.1;
    o.batch_size = 64;
    o.max_iterations = 300;
    o.weight_decay = 1e-3;
    o.seed = seed;
    RunOptions options;
    options.log_period = 50;
    options.evaluate_train = false;
    o.strategy = AlignmentStrategy::fixed;
    fixed_acc.push_back(run_experiment(graph, o, data, options).final_test_acc);
    o.strategy = AlignmentStrategy::adaptive;
    adaptive.push_back(run_experiment(graph, o, data, options).final_test_acc);
  }
  tally.expect(mean(adaptive) >= mean(fixed_acc) - 0.002, "adaptive below fixed by more than 0.2 points");
  tally.note("adaptive " + fixed(mean(adaptive)) + " vs fixed " + fixed(mean(fixed_acc)));
  return {10, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

// 11. Reproducible metric files.

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Result determinism() {
  Tally tally;
  const std::filesystem::path root =
      std::filesystem::temp_directory_path() / ("dgnopt-determinism-" + std::to_string(::getpid()));
  std::vector<ExperimentConfig> configs(3);
  configs[0].optimizer.mode = TrainMode::gr;
  configs[0].optimizer.precondition.kind = PreconditionKind::kfac;
  configs[0].optimizer.state_curvature.mode = StateCurvatureMode::gauss_newton;
  configs[0].optimizer.strategy = AlignmentStrategy::adaptive;
  configs[1].optimizer.mode = TrainMode::fne;
  configs[1].optimizer.precondition.kind = PreconditionKind::rmsprop;
  configs[1].optimizer.strategy = AlignmentStrategy::random;
  configs[2].network.preset = "chain";
  configs[2].network.layers = {8, 8};
  configs[2].optimizer.players_split = 2;
  configs[2].optimizer.precondition.kind = PreconditionKind::cooperative_kfac;
  for (ExperimentConfig& c : configs) {
    if (c.network.preset == "residual-micro") c.network.width = 8;
    c.data.samples = 600;
    c.data.val = 100;
    c.optimizer.batch_size = 32;
    c.optimizer.max_iterations = 40;
    c.optimizer.seed = 5;
    c.output.log_period = 5;
  }
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::vector<std::string> files;
    for (int repeat = 0; repeat < 2; ++repeat) {
      const auto jobs = seed_jobs(configs[i], "config-" + std::to_string(i), root / std::to_string(repeat));
      const auto results = run_jobs(jobs, 1);
      tally.expect(results.at(0).error.empty(), "run failed: " + results.at(0).error);
      files.push_back(slurp(results.at(0).directory / "metrics.csv"));
    }
    tally.expect(!files[0].empty() && files[0] == files[1], "metrics differ for config " + std::to_string(i));
  }
  std::error_code ignored;
  std::filesystem::remove_all(root, ignored);
  return {11, "", tally.failures() == 0, tally.checks(), tally.failures(), tally.detail()};
}

struct Criterion {
  const char* title;
  Result (*run)();
  double budget;
};

const Criterion& criterion(int id) {
  static const Criterion table[] = {
      {"backprop gradient matches finite differences", gradient_oracle, 30},
      {"game solvers reduce to first-order optimizers", reductions, 60},
      {"one pass solves linear-quadratic games", lq_exactness, 30},
      {"value recursions match the minimized local model", value_propagation, 0},
      {"cooperative Kronecker solve matches the dense block solve", cooperative_kfac, 0},
      {"MNIST subset: GR reaches 95% and beats SGD", mnist_training, 900},
      {"feedback gains stabilize large steps", feedback_stabilization, 0},
      {"fictitious players speed up training", fictitious_players, 0},
      {"EXP3++ distribution invariants and convergence", bandit, 0},
      {"adaptive alignment is no worse than fixed", adaptive_alignment, 0},
      {"repeated runs write identical metrics", determinism, 0},
  };
  if (id < 1 || id > criterion_count()) throw Error(ErrorKind::invalid_argument, "no criterion " + std::to_string(id));
  return table[id - 1];
}

}  // namespace

int criterion_count() { return 11; }

std::string title(int id) { return criterion(id).title; }

Result run_criterion(int id) {
  const Criterion& c = criterion(id);
  const auto start = std::chrono::steady_clock::now();
  Result result;
  try {
    result = c.run();
  } catch (const std::exception& e) {
    result = {id, "", false, 1, 1, std::string("threw: ") + e.what()};
  }
  result.id = id;
  result.title = c.title;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.budget_seconds = c.budget;
  if (c.budget > 0 && result.seconds > c.budget) {
    result.passed = false;
    result.detail += ", over the " + fixed(c.budget, 0) + " s budget";
  }
  return result;
}

std::vector<Result> run_all(const Options& options) {
  std::vector<int> ids = options.only;
  if (ids.empty())
    for (int id = 1; id <= criterion_count(); ++id) ids.push_back(id);
  std::vector<Result> results;
  for (int id : ids) {
    results.push_back(run_criterion(id));
    if (options.progress) options.progress(results.back());
  }
  return results;
}

std::string format(const Result& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS" : "FAIL") << "  " << (r.id < 10 ? " " : "") << r.id << "  " << r.title << "  ("
     << r.detail << ", " << fixed(r.seconds, 1) << "s)";
  return os.str();
}

}  // namespace dgnopt::acceptance
