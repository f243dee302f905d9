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

#include "dgnopt/oracle.hpp"

#include <limits>
#include <random>
#include <stdexcept>

#include "dgnopt/error.hpp"

namespace dgnopt::oracle {

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::invalid_argument, "finite-difference step must be positive");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error(ErrorKind::non_finite_loss, "loss is not finite near coordinate " + std::to_string(i));
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

double fd_curvature(const std::function<double(const Vector&)>& f, const Vector& x, const Vector& dir, double h) {
  const double up = f(x + h * dir);
  const double mid = f(x);
  const double down = f(x - h * dir);
  if (!std::isfinite(up) || !std::isfinite(mid) || !std::isfinite(down))
    throw Error(ErrorKind::non_finite_loss, "loss is not finite along the probe");
  return (up - 2.0 * mid + down) / (h * h);
}

JointSolution dense_joint_solve(const JointQuadratic& q, double damping) {
  const std::size_t m = q.gradients.size();
  if (q.blocks.size() != m) throw Error(ErrorKind::dimension_mismatch, "one block row per player");
  std::vector<Eigen::Index> start(m + 1, 0);
  for (std::size_t p = 0; p < m; ++p) start[p + 1] = start[p] + q.gradients[p].size();
  const Eigen::Index n = start[m];
  Matrix h(n, n);
  Vector g(n);
  for (std::size_t p = 0; p < m; ++p) {
    g.segment(start[p], q.gradients[p].size()) = q.gradients[p];
    for (std::size_t r = 0; r < m; ++r) {
      const Matrix& b = q.blocks[p].at(r);
      if (b.rows() != start[p + 1] - start[p] || b.cols() != start[r + 1] - start[r])
        throw Error(ErrorKind::dimension_mismatch, "block shape");
      h.block(start[p], start[r], b.rows(), b.cols()) = b;
    }
  }
  h.diagonal().array() += damping;
  const Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::singular_system, "joint system is not positive definite");
  const Vector x = llt.solve(g);
  JointSolution out;
  out.value = -0.5 * g.dot(x);
  for (std::size_t p = 0; p < m; ++p) out.gains.push_back(x.segment(start[p], start[p + 1] - start[p]));
  return out;
}

// ---------------------------------------------------------------------------
// Linear games

std::vector<PlayerInfo> LinearGame::stage_players(int t) const {
  int offset = 0;
  for (int s = 0; s < t; ++s)
    for (const Actor& a : actors[s]) offset += static_cast<int>(a.B.cols());
  std::vector<PlayerInfo> out;
  for (const Actor& a : actors.at(t)) {
    out.push_back({a.slot, offset, static_cast<int>(a.B.cols())});
    offset += static_cast<int>(a.B.cols());
  }
  return out;
}

int LinearGame::param_count() const {
  int n = 0;
  for (const auto& stage : actors)
    for (const Actor& a : stage) n += static_cast<int>(a.B.cols());
  return n;
}

Matrix LinearGame::propagate(int t, const Matrix& x, const Vector& params) const {
  Matrix next = A.at(t) * x;
  const auto info = stage_players(t);
  for (std::size_t i = 0; i < info.size(); ++i)
    next.colwise() += actors[t][i].B * params.segment(info[i].offset, info[i].size);
  return next;
}

std::vector<Matrix> LinearGame::rollout(const Vector& params, const Matrix& x0) const {
  std::vector<Matrix> states{x0};
  for (int t = 0; t < horizon(); ++t) states.push_back(propagate(t, states.back(), params));
  return states;
}

double LinearGame::cost(const Vector& params, const Matrix& x0) const {
  const Matrix xt = rollout(params, x0).back();
  double total = 0.0;
  for (Eigen::Index b = 0; b < xt.cols(); ++b) {
    const Vector r = xt.col(b) - (target.cols() == 1 ? target.col(0) : target.col(b));
    total += 0.5 * r.dot(Q * r);
  }
  return total / xt.cols() + 0.5 * decay * params.squaredNorm();
}

Linearization LinearGame::linearize(const Vector& params, const Matrix& x0) const {
  Linearization lin;
  lin.states = rollout(params, x0);
  lin.players = slots;
  const int batch = static_cast<int>(x0.cols());
  for (int t = 0; t < horizon(); ++t) {
    std::vector<std::vector<Matrix>> ftheta;
    for (const Actor& a : actors[t]) ftheta.emplace_back(batch, a.B);
    lin.stages.push_back(
        std::make_unique<DenseStage>(std::vector<Matrix>(batch, A[t]), std::move(ftheta), stage_players(t)));
  }
  return lin;
}

LinearGame LinearGame::random(int horizon, int slots, int state_dim, int action_dim, std::uint64_t seed,
                              bool all_players_every_stage) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto randn = [&](int r, int c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
    return m;
  };
  LinearGame g;
  g.slots = slots;
  g.decay = 0.5 + std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (int t = 0; t < horizon; ++t) {
    g.A.push_back(Matrix::Identity(state_dim, state_dim) + 0.3 * randn(state_dim, state_dim) / std::sqrt(state_dim));
    std::vector<Actor> stage;
    if (all_players_every_stage) {
      for (int n = 0; n < slots; ++n) stage.push_back({n, randn(state_dim, action_dim) / std::sqrt(state_dim)});
    } else {
      stage.push_back({t % slots, randn(state_dim, action_dim) / std::sqrt(state_dim)});
    }
    g.actors.push_back(std::move(stage));
  }
  const Matrix l = randn(state_dim, state_dim);
  g.Q = l * l.transpose() / state_dim + 0.5 * Matrix::Identity(state_dim, state_dim);
  g.target = randn(state_dim, 1);
  return g;
}

LqOptimum lq_game_value(const LinearGame& game, const Matrix& x0) {
  const int T = game.horizon();
  const int n = game.param_count();
  const Eigen::Index d = game.Q.rows();
  // x_T = Φ x0 + G u
  Matrix phi = Matrix::Identity(x0.rows(), x0.rows());
  for (int t = 0; t < T; ++t) phi = game.A[t] * phi;
  Matrix G(d, n);
  int col = 0;
  for (int t = 0; t < T; ++t) {
    Matrix tail = Matrix::Identity(game.A[t].rows(), game.A[t].rows());
    for (int s = T - 1; s > t; --s) tail = tail * game.A[s];
    for (const auto& actor : game.actors[t]) {
      G.middleCols(col, actor.B.cols()) = tail * actor.B;
      col += static_cast<int>(actor.B.cols());
    }
  }
  Matrix residual = phi * x0;
  for (Eigen::Index b = 0; b < residual.cols(); ++b)
    residual.col(b) -= game.target.cols() == 1 ? game.target.col(0) : game.target.col(b);
  const Vector mean_residual = residual.rowwise().mean();
  Matrix h = G.transpose() * game.Q * G;
  h.diagonal().array() += game.decay;
  const Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::singular_system, "flattened program is not convex");
  LqOptimum out;
  out.params = -llt.solve(Vector(G.transpose() * game.Q * mean_residual));
  out.value = game.cost(out.params, x0);
  return out;
}

std::vector<std::vector<AffinePolicy>> lq_feedback_nash(const LinearGame& game) {
  const int T = game.horizon();
  const int N = game.slots;
  const Eigen::Index dT = game.Q.rows();
  std::vector<Matrix> S(N, game.Q);
  std::vector<Vector> s(N);
  for (int n = 0; n < N; ++n) s[n] = -game.Q * game.target.col(0);
  std::vector<std::vector<AffinePolicy>> policies(T);
  (void)dT;
  for (int t = T - 1; t >= 0; --t) {
    if (game.actors[t].size() > 1)
      throw Error(ErrorKind::invalid_argument, "the feedback Nash reference handles one actor per stage");
    const Matrix& A = game.A[t];
    Matrix closed = A;
    Vector shift = Vector::Zero(A.rows());
    int actor = -1;
    AffinePolicy policy;
    if (!game.actors[t].empty()) {
      const auto& a = game.actors[t][0];
      actor = a.slot;
      Matrix m = a.B.transpose() * S[actor] * a.B;
      m.diagonal().array() += game.decay;
      const Eigen::LLT<Matrix> llt(m);
      policy.beta = -llt.solve(Matrix(a.B.transpose() * S[actor] * A));
      policy.alpha = -llt.solve(Vector(a.B.transpose() * s[actor]));
      closed = A + a.B * policy.beta;
      shift = a.B * policy.alpha;
      policies[t].push_back(policy);
    }
    for (int n = 0; n < N; ++n) {
      Vector lin = closed.transpose() * (S[n] * shift + s[n]);
      Matrix quad = closed.transpose() * S[n] * closed;
      if (n == actor) {
        quad += game.decay * policy.beta.transpose() * policy.beta;
        lin += game.decay * policy.beta.transpose() * policy.alpha;
      }
      S[n] = symmetrized(quad);
      s[n] = lin;
    }
  }
  return policies;
}

double LocalStageModel::minimum(const Vector& dx) const {
  const std::size_t batch = fx.size();
  const double inv = 1.0 / static_cast<double>(batch);
  double base = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const Vector moved = fx[b] * dx;
    base += next_first.col(static_cast<Eigen::Index>(b)).dot(moved) + 0.5 * inv * moved.dot(next_second * moved);
  }
  if (chosen.empty()) return base;
  JointQuadratic q;
  for (int p : chosen) {
    Vector g = decay * theta[p];
    for (std::size_t b = 0; b < batch; ++b)
      g += ftheta[p][b].transpose() * (next_first.col(static_cast<Eigen::Index>(b)) + inv * next_second * (fx[b] * dx));
    q.gradients.push_back(g);
    std::vector<Matrix> row;
    for (int r : chosen) {
      Matrix block = Matrix::Zero(ftheta[p][0].cols(), ftheta[r][0].cols());
      for (std::size_t b = 0; b < batch; ++b) block += inv * ftheta[p][b].transpose() * next_second * ftheta[r][b];
      if (r == p) block.diagonal().array() += decay;
      row.push_back(block);
    }
    q.blocks.push_back(row);
  }
  return base + dense_joint_solve(q).value;
}

Matrix random_matrix(int rows, int cols, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
  return m;
}

Vector random_vector(int n, std::uint64_t seed, double scale) { return random_matrix(n, 1, seed, scale).col(0); }

double kink_margin(const StagedGame& game, const Vector& params, const Matrix& x0) {
  const Trajectory traj = game.forward(params, x0);
  double margin = std::numeric_limits<double>::infinity();
  for (int t = 0; t < game.horizon(); ++t) {
    const auto& layers = game.plan(t).layers;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (game.graph().node(layers[i].node).spec.activation != Activation::relu) continue;
      const Matrix& pre = traj.caches[t][i].pre;
      if (pre.size() > 0) margin = std::min(margin, pre.cwiseAbs().minCoeff());
    }
  }
  return margin;
}

Matrix kink_safe_input(const StagedGame& game, const Vector& params, int batch, std::uint64_t seed, double margin) {
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    Matrix x = random_matrix(game.graph().input_dim(), batch, seed * 7919 + attempt);
    if (kink_margin(game, params, x) >= margin) return x;
  }
  throw std::runtime_error("no kink-safe input found");
}

FdStage fd_stage(const StageDynamics& game, int t, const Matrix& x, const Vector& params, double h) {
  const Eigen::Index batch = x.cols();
  FdStage out;
  const Matrix base = game.propagate(t, x, params);
  out.fx.assign(batch, Matrix(base.rows(), x.rows()));
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    Matrix up = x, down = x;
    up.row(j).array() += h;
    down.row(j).array() -= h;
    const Matrix d = (game.propagate(t, up, params) - game.propagate(t, down, params)) / (2 * h);
    for (Eigen::Index b = 0; b < batch; ++b) out.fx[b].col(j) = d.col(b);
  }
  for (const PlayerInfo& p : game.stage_players(t)) {
    std::vector<Matrix> per(batch, Matrix(base.rows(), p.size));
    for (int j = 0; j < p.size; ++j) {
      Vector up = params, down = params;
      up(p.offset + j) += h;
      down(p.offset + j) -= h;
      const Matrix d = (game.propagate(t, x, up) - game.propagate(t, x, down)) / (2 * h);
      for (Eigen::Index b = 0; b < batch; ++b) per[b].col(j) = d.col(b);
    }
    out.ftheta.push_back(std::move(per));
  }
  return out;
}

NetworkGraph micro_net(int id, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int input = 2 + static_cast<int>(rng() % 4);
  const int width = 3 + static_cast<int>(rng() % 4);
  const int classes = 2 + static_cast<int>(rng() % 3);
  switch (id % 4) {
    case 0: return make_chain(input, {width, width + 1, classes});
    case 1: return make_residual_micro(input, width, 2, classes, Shortcut::identity);
    case 2: return make_residual_micro(input, width, 1, classes, Shortcut::dense);
    default: return make_inception_micro(input, width, classes);
  }
}

}  // namespace dgnopt::oracle
