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

#include "dgnopt/game_core.hpp"

#include <cmath>
#include <string>

#include "dgnopt/error.hpp"

namespace dgnopt {

// ---------------------------------------------------------------------------
// Terminal losses

TerminalLoss TerminalLoss::cross_entropy(std::vector<int> labels) {
  TerminalLoss loss;
  loss.kind_ = TerminalKind::softmax_cross_entropy;
  loss.labels_ = std::move(labels);
  return loss;
}

TerminalLoss TerminalLoss::mean_squared(Matrix targets) {
  TerminalLoss loss;
  loss.kind_ = TerminalKind::mean_squared_error;
  loss.targets_ = std::move(targets);
  return loss;
}

TerminalLoss TerminalLoss::quadratic(Matrix weight, Matrix targets) {
  TerminalLoss loss;
  loss.kind_ = TerminalKind::quadratic;
  loss.weight_ = std::move(weight);
  loss.targets_ = std::move(targets);
  return loss;
}

namespace {

void check_batch(const Matrix& x, Eigen::Index expected) {
  if (x.cols() != expected) throw Error(ErrorKind::dimension_mismatch, "terminal payload does not match the batch");
}

Vector softmax(const Vector& logits) {
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Matrix target_column(const Matrix& targets, Eigen::Index b) {
  return targets.cols() == 1 ? targets.col(0) : targets.col(b);
}

}  // namespace

double TerminalLoss::value(const Matrix& x) const {
  const Eigen::Index batch = x.cols();
  double total = 0.0;
  switch (kind_) {
    case TerminalKind::softmax_cross_entropy:
      check_batch(x, static_cast<Eigen::Index>(labels_.size()));
      for (Eigen::Index b = 0; b < batch; ++b) {
        if (labels_[b] < 0 || labels_[b] >= x.rows())
          throw Error(ErrorKind::label_range, "label " + std::to_string(labels_[b]));
        const double top = x.col(b).maxCoeff();
        total += top + std::log((x.col(b).array() - top).exp().sum()) - x(labels_[b], b);
      }
      break;
    case TerminalKind::mean_squared_error:
      for (Eigen::Index b = 0; b < batch; ++b)
        total += (x.col(b) - target_column(targets_, b)).squaredNorm() / x.rows();
      break;
    case TerminalKind::quadratic:
      for (Eigen::Index b = 0; b < batch; ++b) {
        const Vector r = x.col(b) - target_column(targets_, b);
        total += 0.5 * r.dot(weight_ * r);
      }
      break;
  }
  return total / batch;
}

Matrix TerminalLoss::gradient(const Matrix& x) const {
  const Eigen::Index batch = x.cols();
  Matrix g(x.rows(), batch);
  switch (kind_) {
    case TerminalKind::softmax_cross_entropy:
      check_batch(x, static_cast<Eigen::Index>(labels_.size()));
      for (Eigen::Index b = 0; b < batch; ++b) {
        if (labels_[b] < 0 || labels_[b] >= x.rows())
          throw Error(ErrorKind::label_range, "label " + std::to_string(labels_[b]));
        g.col(b) = softmax(x.col(b));
        g(labels_[b], b) -= 1.0;
      }
      break;
    case TerminalKind::mean_squared_error:
      for (Eigen::Index b = 0; b < batch; ++b) g.col(b) = (2.0 / x.rows()) * (x.col(b) - target_column(targets_, b));
      break;
    case TerminalKind::quadratic:
      for (Eigen::Index b = 0; b < batch; ++b) g.col(b) = weight_ * (x.col(b) - target_column(targets_, b));
      break;
  }
  return g / static_cast<double>(batch);
}

Matrix TerminalLoss::hessian(const Matrix& x) const {
  const Eigen::Index d = x.rows();
  switch (kind_) {
    case TerminalKind::softmax_cross_entropy: {
      Matrix h = Matrix::Zero(d, d);
      for (Eigen::Index b = 0; b < x.cols(); ++b) {
        const Vector s = softmax(x.col(b));
        h += Matrix(s.asDiagonal()) - s * s.transpose();
      }
      return h / static_cast<double>(x.cols());
    }
    case TerminalKind::mean_squared_error:
      return (2.0 / d) * Matrix::Identity(d, d);
    case TerminalKind::quadratic:
      return weight_;
  }
  return Matrix::Zero(d, d);
}

double CostModel::stage_value(const Linearization& lin, const Vector& params) const {
  double total = 0.0;
  for (int t = 0; t < lin.horizon(); ++t)
    for (const PlayerInfo& p : lin.stages[t]->players())
      total += 0.5 * decay(t, p.slot) * params.segment(p.offset, p.size).squaredNorm();
  return total;
}

// ---------------------------------------------------------------------------
// Co-states

namespace {

void require_finite(const Matrix& m, const char* what, int t) {
  if (!m.allFinite()) throw Error(ErrorKind::non_finite_value, std::string(what) + " at stage " + std::to_string(t));
}

OlneResult adjoint_pass(const Linearization& lin, const Vector& params, const CostModel& cost, double weight) {
  const int T = lin.horizon();
  OlneResult out;
  out.costates.resize(T + 1);
  out.gradients.resize(T);
  out.costates[T] = weight * cost.terminal.gradient(lin.states[T]);
  require_finite(out.costates[T], "co-state", T);
  for (int t = T - 1; t >= 0; --t) {
    const LinearizedStage& stage = *lin.stages[t];
    const Matrix& next = out.costates[t + 1];
    for (int p = 0; p < static_cast<int>(stage.players().size()); ++p) {
      const PlayerInfo& info = stage.players()[p];
      out.gradients[t].push_back(cost.decay(t, info.slot) * params.segment(info.offset, info.size) +
                                 stage.param_vjp(p, next));
      require_finite(out.gradients[t].back(), "Hamiltonian gradient", t);
    }
    out.costates[t] = stage.state_vjp(next);
    require_finite(out.costates[t], "co-state", t);
  }
  return out;
}

}  // namespace

OlneResult olne_backward(const Linearization& lin, const Vector& params, const CostModel& cost) {
  return adjoint_pass(lin, params, cost, 1.0);
}

OlneResult group_olne_backward(const Linearization& lin, const Vector& params, const CostModel& cost) {
  return adjoint_pass(lin, params, cost, cost.group_weight(lin.players));
}

GainSchedule olne_gains(const OlneResult& olne) {
  GainSchedule gains;
  gains.mode = GainMode::olne;
  for (const auto& stage : olne.gradients) {
    StageGains s;
    s.open = stage;
    s.feedback.resize(stage.size());
    gains.stages.push_back(std::move(s));
  }
  return gains;
}

// ---------------------------------------------------------------------------
// Curvature models

void ExactCurvature::prepare(const LinearizedStage& stage, int, int p, double decay, const Matrix&,
                             const Matrix& vxx_next) {
  if (static_cast<int>(blocks_.size()) <= p) {
    blocks_.resize(p + 1);
    inverses_.resize(p + 1);
  }
  Matrix block = stage.param_gram(p, p, vxx_next);
  block.diagonal().array() += decay;
  inverses_[p] = SymmetricInverse(block, damping_, rel_tol_);
  if (inverses_[p].dropped() > 0) ++singular_;
  blocks_[p] = std::move(block);
}

Vector ExactCurvature::solve_open(int p, const Vector& g) { return inverses_.at(p).solve(g); }
Matrix ExactCurvature::solve_feedback(int p, const Matrix& gx) { return inverses_.at(p).solve(gx); }
Matrix ExactCurvature::block(int p) { return blocks_.at(p); }

void IdentityCurvature::prepare(const LinearizedStage& stage, int, int p, double, const Matrix&, const Matrix&) {
  if (static_cast<int>(sizes_.size()) <= p) sizes_.resize(p + 1);
  sizes_[p] = stage.players()[p].size;
}

Matrix IdentityCurvature::block(int p) {
  return Matrix::Identity(sizes_.at(p), sizes_.at(p)) / scale_;
}

// ---------------------------------------------------------------------------
// Feedback gains

FeedbackGain FeedbackGain::factored(Matrix left, Matrix right, Matrix left_gram) {
  if (left.cols() != right.cols()) throw Error(ErrorKind::dimension_mismatch, "factored gain inner dimensions");
  FeedbackGain k;
  k.left_ = std::move(left);
  k.right_ = std::move(right);
  k.left_gram_ = std::move(left_gram);
  return k;
}

Vector FeedbackGain::apply(const Vector& dx) const {
  if (is_factored()) return left_ * (right_.transpose() * dx);
  return dense_ * dx;
}

Vector FeedbackGain::apply_transpose(const Vector& g) const {
  if (is_factored()) return right_ * (left_.transpose() * g);
  return dense_.transpose() * g;
}

double FeedbackGain::squared_norm() const {
  if (!is_factored()) return dense_.squaredNorm();
  const Matrix right_gram = right_.transpose() * right_;
  if (left_gram_.size() > 0) return left_gram_.cwiseProduct(right_gram).sum();
  return (left_.transpose() * left_).cwiseProduct(right_gram).sum();
}

const Matrix& FeedbackGain::matrix() const {
  if (is_factored()) throw Error(ErrorKind::invalid_argument, "feedback gain is factored");
  return dense_;
}

Matrix FeedbackGain::materialize() const { return is_factored() ? Matrix(left_ * right_.transpose()) : dense_; }

Matrix CurvatureModel::solve_outer(int p, const Matrix& c, const Matrix& a, Matrix*) {
  return solve_feedback(p, outer_columns(c, a));
}

// ---------------------------------------------------------------------------
// Backward recursions

namespace {

struct PlayerTerms {
  Vector g;       // Q_θ or P_u
  Vector target;  // what the open gain solves for
  Matrix gx;      // Q_θx or P_ux (empty when feedback is off or factored)
  Vector k;
  FeedbackGain K;
};

/// Per-sample value gradients u_b = B v_b and their pullbacks through the state map.
struct SamplePairing {
  Matrix u;
  Matrix h;  // columns (F_x^b)ᵀ u_b
};

SamplePairing pair_samples(const LinearizedStage& stage, const Matrix& first) {
  SamplePairing s;
  s.u = static_cast<double>(stage.batch()) * first;
  s.h = stage.state_vjp(s.u);
  return s;
}

/// K = M⁻¹ mean_b (F_θ^b)ᵀ u_b h_bᵀ as a factored gain.
FeedbackGain sample_feedback(const LinearizedStage& stage, int p, const SamplePairing& s, CurvatureModel& curvature) {
  const double B = stage.batch();
  Matrix gram;
  Matrix left;
  if (const KroneckerView* view = stage.kronecker(p)) {
    const Matrix c = view->out_scale.cwiseProduct(s.u.middleRows(view->out_offset, view->out_dim));
    left = curvature.solve_outer(p, c, *view->inputs, &gram);
  } else {
    left = curvature.solve_feedback(p, stage.param_vjp_samples(p, s.u));
  }
  left /= B;
  if (gram.size() > 0) gram /= B * B;
  return FeedbackGain::factored(std::move(left), s.h, std::move(gram));
}

/// Dense mean_b (F_θ^b)ᵀ u_b h_bᵀ, for coupled solves.
Matrix sample_cross(const LinearizedStage& stage, int p, const SamplePairing& s) {
  return stage.param_vjp_samples(p, s.u) * s.h.transpose() / static_cast<double>(stage.batch());
}

/// Columns V_b m_b / B of the per-sample curvature V_b = u_b u_bᵀ.
Matrix sample_curvature_times(const SamplePairing& s, const Matrix& m) {
  const Eigen::RowVectorXd dots = s.u.cwiseProduct(m).colwise().sum();
  return (s.u.array().rowwise() * dots.array()).matrix() / static_cast<double>(s.u.cols());
}

Matrix sample_second(const Matrix& first) {
  return static_cast<double>(first.cols()) * first * first.transpose();
}

Matrix finish_second(Matrix second, const Matrix& first, const BackwardOptions& options) {
  second = symmetrized(second);
  if (options.compress) second = symmetrized(options.compress(second, first));
  return second;
}

void count(BackwardStats& stats, const SymmetricInverse& inv) {
  if (inv.dropped() > 0) ++stats.singular;
}

/// Two-player cooperative gains from explicit blocks (closed-form Schur complements).
void solve_two_player(const Matrix& puu, const Matrix& pvv, const Matrix& puv, PlayerTerms& u, PlayerTerms& v,
                      const BackwardOptions& options, BackwardStats& stats) {
  const bool feedback = u.gx.size() > 0;
  const SymmetricInverse iuu(puu, options.damping, options.rel_tol);
  const SymmetricInverse ivv(pvv, options.damping, options.rel_tol);
  count(stats, iuu);
  count(stats, ivv);
  const Matrix pvu = puv.transpose();
  const SymmetricInverse su(puu - puv * ivv.solve(pvu), options.damping, options.rel_tol);
  const SymmetricInverse sv(pvv - pvu * iuu.solve(puv), options.damping, options.rel_tol);
  count(stats, su);
  count(stats, sv);
  const Vector open_v = ivv.solve(v.target);
  const Vector open_u = iuu.solve(u.target);
  u.k = su.solve(Vector(u.target - puv * open_v));
  v.k = sv.solve(Vector(v.target - pvu * open_u));
  if (feedback) {
    u.K = su.solve(Matrix(u.gx - puv * ivv.solve(v.gx)));
    v.K = sv.solve(Matrix(v.gx - pvu * iuu.solve(u.gx)));
  }
}

void solve_joint(const LinearizedStage& stage, const Matrix& wxx, CurvatureModel& curvature,
                 std::vector<PlayerTerms>& terms, const BackwardOptions& options, BackwardStats& stats) {
  const int m = static_cast<int>(terms.size());
  std::vector<int> start(m + 1, 0);
  for (int p = 0; p < m; ++p) start[p + 1] = start[p] + stage.players()[p].size;
  const int total = start[m];
  Matrix h(total, total);
  for (int p = 0; p < m; ++p) {
    h.block(start[p], start[p], start[p + 1] - start[p], start[p + 1] - start[p]) = curvature.block(p);
    for (int q = p + 1; q < m; ++q) {
      Matrix cross = stage.param_gram(p, q, wxx);
      h.block(start[p], start[q], cross.rows(), cross.cols()) = cross;
      h.block(start[q], start[p], cross.cols(), cross.rows()) = cross.transpose();
    }
  }
  const bool feedback = terms[0].gx.size() > 0;
  const int cols = 1 + (feedback ? stage.state_dim() : 0);
  Matrix rhs(total, cols);
  for (int p = 0; p < m; ++p) {
    rhs.block(start[p], 0, terms[p].target.size(), 1) = terms[p].target;
    if (feedback) rhs.block(start[p], 1, terms[p].gx.rows(), terms[p].gx.cols()) = terms[p].gx;
  }
  const SymmetricInverse inv(h, options.damping, options.rel_tol);
  count(stats, inv);
  const Matrix sol = inv.solve(rhs);
  for (int p = 0; p < m; ++p) {
    const int size = start[p + 1] - start[p];
    terms[p].k = sol.block(start[p], 0, size, 1);
    if (feedback) terms[p].K = Matrix(sol.block(start[p], 1, size, cols - 1));
  }
}

bool feedback_at(int t, const BackwardOptions& options) {
  return !options.zero_feedback && (t > 0 || options.first_stage_feedback);
}

}  // namespace

FneResult fne_backward(const Linearization& lin, const Vector& params, const CostModel& cost,
                       CurvatureModel& curvature, const BackwardOptions& options) {
  const int T = lin.horizon();
  const int N = lin.players;
  const int B = lin.batch();
  const int singular_before = curvature.singular_events();
  FneResult out;
  out.gains.mode = GainMode::fne;
  out.gains.stages.resize(T);
  out.values.assign(T + 1, std::vector<LocalValue>(N));

  // need[t][n]: chain n's value at stage t is used by an earlier player of slot n.
  std::vector<std::vector<bool>> need(T + 1, std::vector<bool>(N, false));
  std::vector<bool> acted(N, false);
  for (int t = 0; t <= T; ++t) {
    for (int n = 0; n < N; ++n) need[t][n] = acted[n] || (t == 0 && options.initial_value);
    if (t < T)
      for (const PlayerInfo& p : lin.stages[t]->players()) acted[p.slot] = true;
  }
  for (int t = 0; t < T; ++t)
    for (int n = 0; n < N; ++n)
      if (need[t][n]) need[t + 1][n] = true;

  const Matrix terminal_first = cost.terminal.gradient(lin.states[T]);
  const Matrix terminal_second = symmetrized(cost.terminal.hessian(lin.states[T]));
  require_finite(terminal_first, "terminal value", T);
  for (int n = 0; n < N; ++n)
    if (need[T][n]) out.values[T][n] = {terminal_first, terminal_second};

  for (int t = T - 1; t >= 0; --t) {
    const LinearizedStage& stage = *lin.stages[t];
    const auto& players = stage.players();
    const bool feedback = feedback_at(t, options);
    std::vector<PlayerTerms> terms(players.size());
    std::vector<int> owner(N, -1);
    for (int p = 0; p < static_cast<int>(players.size()); ++p) {
      const PlayerInfo& info = players[p];
      owner[info.slot] = p;
      const LocalValue& next = out.values[t + 1][info.slot];
      const double decay = cost.decay(t, info.slot);
      PlayerTerms& term = terms[p];
      term.g = decay * params.segment(info.offset, info.size) + stage.param_vjp(p, next.first);
      curvature.prepare(stage, t, p, decay, next.first, next.second);
      term.target = curvature.observe(p, term.g);
      term.k = curvature.solve_open(p, term.target);
      if (feedback && options.sample_gauss_newton) {
        term.K = sample_feedback(stage, p, pair_samples(stage, next.first), curvature);
      } else if (feedback) {
        term.gx = stage.param_state_gram(p, next.second);
        term.K = curvature.solve_feedback(p, term.gx);
      }
      require_finite(term.k, "open gain", t);
    }
    for (int n = 0; n < N; ++n) {
      if (!need[t][n]) continue;
      const LocalValue& next = out.values[t + 1][n];
      LocalValue& value = out.values[t][n];
      const int p = owner[n];
      if (options.sample_gauss_newton) {
        Matrix moved = next.first;
        if (p >= 0 && feedback)
          moved -= sample_curvature_times(pair_samples(stage, next.first), stage.param_jvp(p, terms[p].k));
        value.first = stage.state_vjp(moved);
        value.second = sample_second(value.first);
      } else if (p >= 0 && feedback) {
        const Matrix correction = next.second * stage.param_jvp(p, terms[p].k) / static_cast<double>(B);
        value.first = stage.state_vjp(next.first - correction);
        value.second = stage.state_gram(next.second) - terms[p].gx.transpose() * terms[p].K.matrix();
        value.second = finish_second(std::move(value.second), value.first, options);
      } else {
        value.first = stage.state_vjp(next.first);
        value.second = finish_second(stage.state_gram(next.second), value.first, options);
      }
      require_finite(value.first, "value", t);
      require_finite(value.second, "value curvature", t);
    }
    StageGains& gains = out.gains.stages[t];
    for (PlayerTerms& term : terms) {
      gains.open.push_back(std::move(term.k));
      gains.feedback.push_back(std::move(term.K));
    }
  }
  out.stats.singular = curvature.singular_events() - singular_before;
  return out;
}

GrResult gr_backward(const Linearization& lin, const Vector& params, const CostModel& cost,
                     CurvatureModel& curvature, const BackwardOptions& options) {
  const int T = lin.horizon();
  const int B = lin.batch();
  const int singular_before = curvature.singular_events();
  const int fallbacks_before = curvature.fallback_events();
  GrResult out;
  out.gains.mode = GainMode::gr;
  out.gains.stages.resize(T);
  out.values.resize(T + 1);
  const double weight = cost.group_weight(lin.players);
  out.values[T] = {weight * cost.terminal.gradient(lin.states[T]),
                   weight * symmetrized(cost.terminal.hessian(lin.states[T]))};
  require_finite(out.values[T].first, "terminal value", T);

  for (int t = T - 1; t >= 0; --t) {
    const LinearizedStage& stage = *lin.stages[t];
    const auto& players = stage.players();
    const int m = static_cast<int>(players.size());
    const bool feedback = feedback_at(t, options);
    const LocalValue& next = out.values[t + 1];
    std::vector<PlayerTerms> terms(m);
    const bool independent = m == 1 || (m > 1 && options.coupling == Coupling::none);
    const bool factored = feedback && options.sample_gauss_newton && independent;
    SamplePairing pairing;
    if (options.sample_gauss_newton && m > 0) pairing = pair_samples(stage, next.first);
    for (int p = 0; p < m; ++p) {
      const PlayerInfo& info = players[p];
      const double decay = cost.decay(t, info.slot);
      terms[p].g = decay * params.segment(info.offset, info.size) + stage.param_vjp(p, next.first);
      if (feedback && !factored)
        terms[p].gx = options.sample_gauss_newton ? sample_cross(stage, p, pairing)
                                                  : stage.param_state_gram(p, next.second);
      curvature.prepare(stage, t, p, decay, next.first, next.second);
      terms[p].target = curvature.observe(p, terms[p].g);
    }
    if (independent) {
      for (int p = 0; p < m; ++p) {
        terms[p].k = curvature.solve_open(p, terms[p].target);
        if (factored) terms[p].K = sample_feedback(stage, p, pairing, curvature);
        else if (feedback) terms[p].K = curvature.solve_feedback(p, terms[p].gx);
      }
    } else if (m == 2) {
      CurvatureModel::PairProblem problem{terms[0].target, terms[1].target, terms[0].gx, terms[1].gx};
      CurvatureModel::PairSolution solution;
      if (curvature.solve_pair(stage, t, 0, 1, problem, solution)) {
        terms[0].k = std::move(solution.ku);
        terms[1].k = std::move(solution.kv);
        terms[0].K = std::move(solution.Ku);
        terms[1].K = std::move(solution.Kv);
      } else {
        solve_two_player(curvature.block(0), curvature.block(1), stage.param_gram(0, 1, next.second), terms[0],
                         terms[1], options, out.stats);
      }
    } else if (m > 2) {
      solve_joint(stage, next.second, curvature, terms, options, out.stats);
    }
    for (const PlayerTerms& term : terms) require_finite(term.k, "cooperative gain", t);

    if (t > 0 || options.initial_value) {
      LocalValue& value = out.values[t];
      if (feedback && m > 0) {
        Matrix moved = Matrix::Zero(stage.next_dim(), B);
        Vector reaction = Vector::Zero(stage.state_dim());
        for (int p = 0; p < m; ++p) {
          moved += stage.param_jvp(p, terms[p].k);
          reaction += terms[p].K.apply_transpose(terms[p].g);
        }
        const Matrix curved = options.sample_gauss_newton ? sample_curvature_times(pairing, moved)
                                                          : Matrix(next.second * moved / static_cast<double>(B));
        value.first = stage.state_vjp(next.first - 0.5 * curved);
        value.first.colwise() -= 0.5 * reaction / static_cast<double>(B);
        if (options.sample_gauss_newton) {
          value.second = sample_second(value.first);
        } else {
          Matrix second = stage.state_gram(next.second);
          for (int p = 0; p < m; ++p) second -= terms[p].gx.transpose() * terms[p].K.matrix();
          value.second = finish_second(std::move(second), value.first, options);
        }
      } else {
        value.first = stage.state_vjp(next.first);
        value.second = options.sample_gauss_newton ? sample_second(value.first)
                                                   : finish_second(stage.state_gram(next.second), value.first, options);
      }
      require_finite(value.first, "group value", t);
      require_finite(value.second, "group value curvature", t);
    }
    StageGains& gains = out.gains.stages[t];
    for (PlayerTerms& term : terms) {
      gains.open.push_back(std::move(term.k));
      gains.feedback.push_back(std::move(term.K));
    }
  }
  out.stats.singular += curvature.singular_events() - singular_before;
  out.stats.fallbacks = curvature.fallback_events() - fallbacks_before;
  return out;
}

// ---------------------------------------------------------------------------
// Feedback pass

FeedbackResult feedback_forward(const StageDynamics& dynamics, const Vector& params, const GainSchedule& gains,
                                const std::vector<Matrix>& states, double step) {
  const int T = dynamics.horizon();
  if (static_cast<int>(gains.stages.size()) != T || static_cast<int>(states.size()) != T + 1)
    throw Error(ErrorKind::dimension_mismatch, "gains or trajectory do not match the game");
  FeedbackResult out;
  out.params = params;
  out.states.reserve(T + 1);
  out.states.push_back(states[0]);
  for (int t = 0; t < T; ++t) {
    const auto players = dynamics.stage_players(t);
    const StageGains& stage = gains.stages[t];
    const bool needs_shift = gains.mode != GainMode::olne;
    Vector shift;
    if (needs_shift) shift = (out.states[t] - states[t]).rowwise().mean();
    for (std::size_t p = 0; p < players.size(); ++p) {
      Vector delta = stage.open[p];
      if (needs_shift && p < stage.feedback.size() && !stage.feedback[p].empty())
        delta += stage.feedback[p].apply(shift);
      out.params.segment(players[p].offset, players[p].size) -= step * delta;
    }
    out.states.push_back(dynamics.propagate(t, out.states[t], out.params));
    if (!out.states.back().allFinite())
      throw Error(ErrorKind::non_finite_state, "feedback pass state " + std::to_string(t + 1) + " is not finite");
  }
  return out;
}

}  // namespace dgnopt
