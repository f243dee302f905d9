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

#include "dgnopt/curvature.hpp"

#include <cmath>
#include <string>

#include "dgnopt/error.hpp"

namespace dgnopt {

const char* to_string(PreconditionKind kind) {
  switch (kind) {
    case PreconditionKind::identity: return "sgd";
    case PreconditionKind::rmsprop: return "rmsprop";
    case PreconditionKind::adam: return "adam";
    case PreconditionKind::gauss_newton: return "gauss-newton";
    case PreconditionKind::kfac: return "kfac";
    case PreconditionKind::ekfac: return "ekfac";
    case PreconditionKind::cooperative_kfac: return "cooperative-kfac";
    case PreconditionKind::exact: return "exact";
  }
  return "?";
}

PreconditionKind parse_precondition(const std::string& name) {
  if (name == "sgd" || name == "identity") return PreconditionKind::identity;
  if (name == "rmsprop") return PreconditionKind::rmsprop;
  if (name == "adam") return PreconditionKind::adam;
  if (name == "gauss-newton" || name == "gn") return PreconditionKind::gauss_newton;
  if (name == "kfac") return PreconditionKind::kfac;
  if (name == "ekfac") return PreconditionKind::ekfac;
  if (name == "cooperative-kfac") return PreconditionKind::cooperative_kfac;
  if (name == "exact") return PreconditionKind::exact;
  throw Error(ErrorKind::config, "unknown preconditioner '" + name + "'");
}

// ---------------------------------------------------------------------------
// Factors

namespace {

Matrix ema(const Matrix& old, const Matrix& fresh, double decay) { return decay * old + (1.0 - decay) * fresh; }

Matrix moment(const Matrix& a, const Matrix& b) { return a * b.transpose() / static_cast<double>(a.cols()); }

Matrix self_moment(const Matrix& a) {
  Matrix out = Matrix::Zero(a.rows(), a.rows());
  out.selfadjointView<Eigen::Lower>().rankUpdate(a, 1.0 / static_cast<double>(a.cols()));
  return out.selfadjointView<Eigen::Lower>();
}

Matrix damped(const Matrix& m, double shift) {
  Matrix out = symmetrized(m);
  out.diagonal().array() += shift;
  return out;
}

/// Factor-wise Schur complement operator of a cooperating pair.
class CoopOperator {
 public:
  CoopOperator(const PairFactors& f, double damping) {
    const double shift = std::sqrt(damping);
    out_u_ = static_cast<int>(f.u.B.rows());
    fan_u_ = static_cast<int>(f.u.A.rows());
    out_v_ = static_cast<int>(f.v.B.rows());
    fan_v_ = static_cast<int>(f.v.A.rows());
    if (f.A_uv.rows() != fan_u_ || f.A_uv.cols() != fan_v_ || f.B_uv.rows() != out_u_ || f.B_uv.cols() != out_v_)
      throw Error(ErrorKind::dimension_mismatch, "cross factors do not match the pair");
    b_vv_ = SymmetricInverse(damped(f.v.B, shift));
    a_vv_ = SymmetricInverse(damped(f.v.A, shift));
    b_uv_ = f.B_uv;
    a_uv_ = f.A_uv;
    b_schur_ = SymmetricInverse(damped(f.u.B, shift) - f.B_uv * b_vv_.solve(Matrix(f.B_uv.transpose())));
    a_schur_ = SymmetricInverse(damped(f.u.A, shift) - f.A_uv * a_vv_.solve(Matrix(f.A_uv.transpose())));
  }

  Vector apply(const Vector& gu, const Vector& gv) const {
    if (gu.size() != out_u_ * fan_u_ || gv.size() != out_v_ * fan_v_)
      throw Error(ErrorKind::dimension_mismatch, "gradient does not reshape to the layer");
    const Matrix partner = a_vv_.solve(Matrix(b_vv_.solve(unvec_rows(gv, out_v_, fan_v_)).transpose())).transpose();
    const Matrix inner = unvec_rows(gu, out_u_, fan_u_) + b_uv_ * partner * a_uv_.transpose();
    const Matrix left = b_schur_.solve(inner);
    return vec_rows(a_schur_.solve(Matrix(left.transpose())).transpose());
  }

  double condition() const { return std::max(b_schur_.condition(), a_schur_.condition()); }
  bool singular() const {
    return b_schur_.dropped() + a_schur_.dropped() + b_vv_.dropped() + a_vv_.dropped() > 0;
  }

 private:
  int out_u_ = 0, fan_u_ = 0, out_v_ = 0, fan_v_ = 0;
  SymmetricInverse b_vv_, a_vv_, b_schur_, a_schur_;
  Matrix b_uv_, a_uv_;
};

}  // namespace

FactorInverse::FactorInverse(const Matrix& m) : llt_(m), size_(m.rows()) {
  if (llt_.info() != Eigen::Success) {
    fallback_ = true;
    pinv_ = SymmetricInverse(m);
  }
}

Matrix FactorInverse::solve(const Matrix& rhs) const { return fallback_ ? pinv_.solve(rhs) : Matrix(llt_.solve(rhs)); }

void KroneckerFactors::update(const Matrix& inputs, const Matrix& derivs, double decay) {
  if (inputs.cols() != derivs.cols()) throw Error(ErrorKind::dimension_mismatch, "factor batches differ");
  Matrix a = self_moment(inputs);
  Matrix b = self_moment(derivs);
  if (!initialized()) {
    A = std::move(a);
    B = std::move(b);
    return;
  }
  if (A.rows() != a.rows() || B.rows() != b.rows())
    throw Error(ErrorKind::dimension_mismatch, "factor dimensions changed");
  A = ema(A, a, decay);
  B = ema(B, b, decay);
}

void PairFactors::update(const Matrix& zu, const Matrix& zv, const Matrix& gu, const Matrix& gv, double decay) {
  if (zu.cols() != zv.cols() || zu.cols() != gu.cols() || zu.cols() != gv.cols())
    throw Error(ErrorKind::dimension_mismatch, "pair batches differ");
  const bool first = !u.initialized();
  u.update(zu, gu, decay);
  v.update(zv, gv, decay);
  Matrix a = moment(zu, zv);
  Matrix b = moment(gu, gv);
  if (first) {
    A_uv = std::move(a);
    B_uv = std::move(b);
  } else {
    A_uv = ema(A_uv, a, decay);
    B_uv = ema(B_uv, b, decay);
  }
}

PairFactors swapped(const PairFactors& f) {
  PairFactors out;
  out.u = f.v;
  out.v = f.u;
  out.A_uv = f.A_uv.transpose();
  out.B_uv = f.B_uv.transpose();
  return out;
}

Vector kfac_solve(const KroneckerFactors& f, const Vector& g, double damping) {
  if (!f.initialized()) throw Error(ErrorKind::uninitialized_state, "Kronecker factors are empty");
  const int out = static_cast<int>(f.B.rows());
  const int fan = static_cast<int>(f.A.rows());
  if (g.size() != out * fan) throw Error(ErrorKind::dimension_mismatch, "gradient does not reshape to the layer");
  const double shift = std::sqrt(damping);
  const SymmetricInverse b(damped(f.B, shift));
  const SymmetricInverse a(damped(f.A, shift));
  const Matrix left = b.solve(unvec_rows(g, out, fan));
  return vec_rows(a.solve(Matrix(left.transpose())).transpose());
}

Vector cooperative_kfac_solve(const PairFactors& f, const Vector& gu, const Vector& gv, double damping,
                              double* condition) {
  const CoopOperator op(f, damping);
  if (condition) *condition = op.condition();
  return op.apply(gu, gv);
}

Matrix compress_state_curvature(const Matrix& second, const StateCurvatureApprox& approx, const Matrix& first) {
  switch (approx.mode) {
    case StateCurvatureMode::full:
      return second;
    case StateCurvatureMode::gauss_newton: {
      if (first.rows() != second.rows())
        throw Error(ErrorKind::dimension_mismatch, "Gauss-Newton form needs the per-sample first derivatives");
      return static_cast<double>(first.cols()) * first * first.transpose();
    }
    case StateCurvatureMode::top_eigen: {
      Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(second));
      const Eigen::Index n = second.rows();
      const Eigen::Index keep = std::min<Eigen::Index>(approx.rank, n);
      Matrix out = Matrix::Zero(n, n);
      for (Eigen::Index i = n - keep; i < n; ++i) {
        const double lambda = eig.eigenvalues()(i);
        if (lambda > 0.0) out += lambda * eig.eigenvectors().col(i) * eig.eigenvectors().col(i).transpose();
      }
      return out;
    }
  }
  return second;
}

// ---------------------------------------------------------------------------
// Bank

PreconditionerBank::PreconditionerBank(PreconditionPolicy policy, double learning_rate)
    : policy_(policy), lr_(learning_rate) {
  if (policy_.damping < 0.0 || policy_.ema_decay < 0.0 || policy_.ema_decay >= 1.0 || policy_.update_period < 1)
    throw Error(ErrorKind::invalid_argument, "preconditioner settings out of range");
}

void PreconditionerBank::bind(const std::vector<std::vector<int>>& keys,
                              const std::vector<std::vector<int>>& slots) {
  for (std::size_t t = 0; t < keys.size(); ++t) {
    for (std::size_t p = 0; p < keys[t].size(); ++p) {
      const int key = keys[t][p];
      auto it = states_.find(key);
      if (it != states_.end() && (it->second.stage != static_cast<int>(t) || it->second.slot != slots[t][p])) {
        states_.erase(it);
        for (auto pit = pairs_.begin(); pit != pairs_.end();)
          pit = (pit->first.first == key || pit->first.second == key) ? pairs_.erase(pit) : std::next(pit);
        ++invalidations_;
      }
      LayerState& s = states_[key];
      s.stage = static_cast<int>(t);
      s.slot = slots[t][p];
    }
  }
  keys_ = keys;
}

int PreconditionerBank::key_of(int t, int p) const {
  if (t < static_cast<int>(keys_.size()) && p < static_cast<int>(keys_[t].size())) return keys_[t][p];
  return -(t * 4096 + p) - 1;
}

PreconditionerBank::LayerState& PreconditionerBank::state(int p) {
  if (p >= static_cast<int>(current_.size())) throw Error(ErrorKind::uninitialized_state, "player was not prepared");
  return states_[current_[p].key];
}

const PreconditionerBank::LayerState& PreconditionerBank::state(int p) const {
  if (p >= static_cast<int>(current_.size())) throw Error(ErrorKind::uninitialized_state, "player was not prepared");
  auto it = states_.find(current_[p].key);
  if (it == states_.end()) throw Error(ErrorKind::uninitialized_state, "no state for the layer");
  return it->second;
}

const KroneckerFactors* PreconditionerBank::factors(int key) const {
  auto it = states_.find(key);
  return it == states_.end() || !it->second.factors.initialized() ? nullptr : &it->second.factors;
}

void PreconditionerBank::refresh(LayerState& s) {
  const double shift = std::sqrt(policy_.damping);
  if (policy_.kind == PreconditionKind::ekfac) {
    Eigen::SelfAdjointEigenSolver<Matrix> ea(symmetrized(s.factors.A));
    Eigen::SelfAdjointEigenSolver<Matrix> eb(symmetrized(s.factors.B));
    s.a_basis = ea.eigenvectors();
    s.b_basis = eb.eigenvectors();
    s.scales.resize(0, 0);
    return;
  }
  s.a_inv = FactorInverse(damped(s.factors.A, shift));
  s.b_inv = FactorInverse(damped(s.factors.B, shift));
  if (s.a_inv.singular() || s.b_inv.singular()) ++singular_;
}

void PreconditionerBank::prepare(const LinearizedStage& stage, int t, int p, double decay, const Matrix& vx_next,
                                 const Matrix& vxx_next) {
  if (t != stage_ || p == 0) {
    stage_ = t;
    current_.assign(stage.players().size(), Current{});
  }
  Current& cur = current_.at(p);
  cur.key = key_of(t, p);
  LayerState& s = states_[cur.key];
  const int size = stage.players()[p].size;
  const int batch = stage.batch();
  switch (policy_.kind) {
    case PreconditionKind::identity:
    case PreconditionKind::rmsprop:
    case PreconditionKind::adam:
      s.out = size;
      s.fan = 1;
      break;
    case PreconditionKind::kfac:
    case PreconditionKind::ekfac:
    case PreconditionKind::cooperative_kfac: {
      cur.view = stage.kronecker(p);
      if (!cur.view)
        throw Error(ErrorKind::invalid_argument, "Kronecker-factored curvature needs a dense layer view");
      cur.derivs = static_cast<double>(batch) *
                   cur.view->out_scale.cwiseProduct(vx_next.middleRows(cur.view->out_offset, cur.view->out_dim));
      s.out = cur.view->out_dim;
      s.fan = static_cast<int>(cur.view->inputs->rows());
      s.factors.update(*cur.view->inputs, cur.derivs, policy_.ema_decay);
      const bool refreshed = s.updates % policy_.update_period == 0;
      if (refreshed) refresh(s);
      if (policy_.kind == PreconditionKind::ekfac) {
        const Matrix proj_out = s.b_basis.transpose() * cur.derivs;
        const Matrix proj_in = s.a_basis.transpose() * *cur.view->inputs;
        Matrix fresh = proj_out.cwiseAbs2() * proj_in.cwiseAbs2().transpose() / static_cast<double>(batch);
        s.scales = s.scales.size() == 0 ? fresh : ema(s.scales, fresh, policy_.ema_decay);
      }
      break;
    }
    case PreconditionKind::gauss_newton: {
      s.out = size;
      s.fan = 1;
      s.samples = static_cast<double>(batch) * stage.param_vjp_samples(p, vx_next);
      if (policy_.damping <= 0.0) {
        s.exact = moment(s.samples, s.samples);
        s.exact_inv = SymmetricInverse(s.exact);
      } else {
        Matrix small = s.samples.transpose() * s.samples;
        small.diagonal().array() += policy_.damping * batch;
        s.exact_inv = SymmetricInverse(small);
      }
      if (s.exact_inv.dropped() > 0) ++singular_;
      break;
    }
    case PreconditionKind::exact: {
      s.out = size;
      s.fan = 1;
      s.exact = stage.param_gram(p, p, vxx_next);
      s.exact.diagonal().array() += decay;
      s.exact_inv = SymmetricInverse(s.exact, policy_.damping);
      if (s.exact_inv.dropped() > 0) ++singular_;
      break;
    }
  }
  ++s.updates;
}

Vector PreconditionerBank::observe(int p, const Vector& g) {
  if (policy_.kind != PreconditionKind::rmsprop && policy_.kind != PreconditionKind::adam) return g;
  LayerState& s = state(p);
  if (s.second_moment.size() != g.size()) {
    s.second_moment = Vector::Zero(g.size());
    s.first_moment = Vector::Zero(g.size());
    s.observations = 0;
  }
  ++s.observations;
  if (policy_.kind == PreconditionKind::rmsprop) {
    s.second_moment = policy_.ema_decay * s.second_moment + (1.0 - policy_.ema_decay) * g.cwiseAbs2();
    return g;
  }
  s.first_moment = policy_.beta1 * s.first_moment + (1.0 - policy_.beta1) * g;
  s.second_moment = policy_.beta2 * s.second_moment + (1.0 - policy_.beta2) * g.cwiseAbs2();
  return s.first_moment / (1.0 - std::pow(policy_.beta1, s.observations));
}

Vector PreconditionerBank::apply(int p, const Vector& g) const {
  if (!g.allFinite()) throw Error(ErrorKind::non_finite_value, "gradient handed to the preconditioner");
  const LayerState& s = state(p);
  switch (policy_.kind) {
    case PreconditionKind::identity:
      return lr_ * g;
    case PreconditionKind::rmsprop:
    case PreconditionKind::adam: {
      if (s.second_moment.size() != g.size())
        throw Error(ErrorKind::uninitialized_state, "adaptive moments were not observed");
      Vector scale = s.second_moment;
      if (policy_.kind == PreconditionKind::adam) scale /= 1.0 - std::pow(policy_.beta2, s.observations);
      return lr_ * g.cwiseQuotient((scale.cwiseSqrt().array() + policy_.damping).matrix());
    }
    case PreconditionKind::gauss_newton: {
      if (s.samples.rows() != g.size()) throw Error(ErrorKind::uninitialized_state, "no per-sample gradients");
      if (policy_.damping <= 0.0) return lr_ * s.exact_inv.solve(g);
      const Vector inner = s.exact_inv.solve(Vector(s.samples.transpose() * g));
      return (lr_ / policy_.damping) * (g - s.samples * inner);
    }
    case PreconditionKind::kfac:
    case PreconditionKind::cooperative_kfac: {
      if (s.a_inv.empty()) throw Error(ErrorKind::uninitialized_state, "Kronecker inverses not refreshed");
      const Matrix left = s.b_inv.solve(unvec_rows(g, s.out, s.fan));
      return lr_ * vec_rows(s.a_inv.solve(Matrix(left.transpose())).transpose());
    }
    case PreconditionKind::ekfac: {
      if (s.scales.size() == 0) throw Error(ErrorKind::uninitialized_state, "eigen-corrected scales missing");
      Matrix rotated = s.b_basis.transpose() * unvec_rows(g, s.out, s.fan) * s.a_basis;
      rotated.array() /= s.scales.array() + policy_.damping;
      return lr_ * vec_rows(s.b_basis * rotated * s.a_basis.transpose());
    }
    case PreconditionKind::exact:
      return lr_ * s.exact_inv.solve(g);
  }
  return g;
}

Vector PreconditionerBank::solve_open(int p, const Vector& g) { return apply(p, g); }

Matrix PreconditionerBank::solve_feedback(int p, const Matrix& gx) {
  Matrix out(gx.rows(), gx.cols());
  for (Eigen::Index j = 0; j < gx.cols(); ++j) out.col(j) = apply(p, gx.col(j));
  return out;
}

Matrix PreconditionerBank::solve_outer(int p, const Matrix& c, const Matrix& a, Matrix* gram) {
  const LayerState& s = state(p);
  switch (policy_.kind) {
    case PreconditionKind::identity:
      if (gram) *gram = lr_ * lr_ * (c.transpose() * c).cwiseProduct(a.transpose() * a);
      return lr_ * outer_columns(c, a);
    case PreconditionKind::kfac:
    case PreconditionKind::cooperative_kfac: {
      if (s.a_inv.empty()) throw Error(ErrorKind::uninitialized_state, "Kronecker inverses not refreshed");
      if (!c.allFinite()) throw Error(ErrorKind::non_finite_value, "directions handed to the preconditioner");
      const Matrix out = s.b_inv.solve(c);
      const Matrix in = s.a_inv.solve(a);
      if (gram) *gram = lr_ * lr_ * (out.transpose() * out).cwiseProduct(in.transpose() * in);
      return lr_ * outer_columns(out, in);
    }
    default:
      return solve_feedback(p, outer_columns(c, a));
  }
}

Matrix PreconditionerBank::block(int p) {
  const LayerState& s = state(p);
  const int n = s.out * s.fan;
  Matrix m;
  switch (policy_.kind) {
    case PreconditionKind::identity:
      m = Matrix::Identity(n, n);
      break;
    case PreconditionKind::rmsprop:
    case PreconditionKind::adam: {
      Vector scale = s.second_moment;
      if (policy_.kind == PreconditionKind::adam) scale /= 1.0 - std::pow(policy_.beta2, s.observations);
      m = Matrix((scale.cwiseSqrt().array() + policy_.damping).matrix().asDiagonal());
      break;
    }
    case PreconditionKind::gauss_newton:
      m = moment(s.samples, s.samples);
      m.diagonal().array() += policy_.damping;
      break;
    case PreconditionKind::kfac:
    case PreconditionKind::cooperative_kfac: {
      const double shift = std::sqrt(policy_.damping);
      m = kron(damped(s.factors.B, shift), damped(s.factors.A, shift));
      break;
    }
    case PreconditionKind::ekfac: {
      const Matrix basis = kron(s.b_basis, s.a_basis);
      const Vector scale = vec_rows(s.scales).array() + policy_.damping;
      m = basis * scale.asDiagonal() * basis.transpose();
      break;
    }
    case PreconditionKind::exact:
      m = s.exact;
      m.diagonal().array() += policy_.damping;
      break;
  }
  return m / lr_;
}

bool PreconditionerBank::solve_pair(const LinearizedStage&, int, int u, int v, const PairProblem& problem,
                                    PairSolution& out) {
  if (policy_.kind != PreconditionKind::cooperative_kfac) return false;
  const Current& cu = current_.at(u);
  const Current& cv = current_.at(v);
  PairFactors& f = pairs_[{cu.key, cv.key}];
  const Matrix& zu = *cu.view->inputs;
  const Matrix& zv = *cv.view->inputs;
  Matrix a = moment(zu, zv);
  Matrix b = moment(cu.derivs, cv.derivs);
  if (f.A_uv.size() == 0) {
    f.A_uv = std::move(a);
    f.B_uv = std::move(b);
  } else {
    f.A_uv = ema(f.A_uv, a, policy_.ema_decay);
    f.B_uv = ema(f.B_uv, b, policy_.ema_decay);
  }
  f.u = state(u).factors;
  f.v = state(v).factors;
  const CoopOperator op_u(f, policy_.damping);
  const CoopOperator op_v(swapped(f), policy_.damping);
  const bool feedback = problem.gux.size() > 0;
  if (op_u.condition() > policy_.max_condition || op_v.condition() > policy_.max_condition) {
    ++fallbacks_;
    out.ku = apply(u, problem.gu);
    out.kv = apply(v, problem.gv);
    if (feedback) {
      out.Ku = solve_feedback(u, problem.gux);
      out.Kv = solve_feedback(v, problem.gvx);
    }
    return true;
  }
  if (op_u.singular() || op_v.singular()) ++singular_;
  out.ku = lr_ * op_u.apply(problem.gu, problem.gv);
  out.kv = lr_ * op_v.apply(problem.gv, problem.gu);
  if (feedback) {
    out.Ku.resize(problem.gux.rows(), problem.gux.cols());
    out.Kv.resize(problem.gvx.rows(), problem.gvx.cols());
    for (Eigen::Index j = 0; j < problem.gux.cols(); ++j) {
      out.Ku.col(j) = lr_ * op_u.apply(problem.gux.col(j), problem.gvx.col(j));
      out.Kv.col(j) = lr_ * op_v.apply(problem.gvx.col(j), problem.gux.col(j));
    }
  }
  return true;
}

}  // namespace dgnopt
