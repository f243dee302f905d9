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

#include "dgnopt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "dgnopt/error.hpp"
#include "dgnopt/kernels.hpp"

namespace dgnopt {

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::olne: return "olne";
    case TrainMode::fne: return "fne";
    case TrainMode::gr: return "gr";
  }
  return "?";
}

const char* to_string(AlignmentStrategy strategy) {
  switch (strategy) {
    case AlignmentStrategy::fixed: return "fixed";
    case AlignmentStrategy::random: return "random";
    case AlignmentStrategy::adaptive: return "adaptive";
  }
  return "?";
}

TrainMode parse_mode(const std::string& name) {
  if (name == "olne" || name == "baseline") return TrainMode::olne;
  if (name == "fne") return TrainMode::fne;
  if (name == "gr") return TrainMode::gr;
  throw Error(ErrorKind::config, "unknown mode '" + name + "'");
}

AlignmentStrategy parse_strategy(const std::string& name) {
  if (name == "fixed") return AlignmentStrategy::fixed;
  if (name == "random") return AlignmentStrategy::random;
  if (name == "adaptive" || name == "adaptive-bandit") return AlignmentStrategy::adaptive;
  throw Error(ErrorKind::config, "unknown alignment strategy '" + name + "'");
}

double LrSchedule::at(int iteration) const {
  double rate = base;
  for (int m : milestones)
    if (iteration >= m) rate *= factor;
  return rate;
}

void validate(const OptimizerConfig& config, const NetworkGraph& graph) {
  if (config.players_split < 1) throw Error(ErrorKind::config, "players_split must be positive");
  if (config.players_split > 1 && !graph.is_chain())
    throw Error(ErrorKind::not_a_chain, "fictitious players need a chain network");
  if (config.batch_size < 1) throw Error(ErrorKind::config, "batch_size must be positive");
  if (config.max_iterations < 0) throw Error(ErrorKind::config, "max_iterations must be nonnegative");
  if (!(config.lr.base > 0.0)) throw Error(ErrorKind::config, "learning rate must be positive");
  if (config.precondition.kind == PreconditionKind::cooperative_kfac && config.mode != TrainMode::gr)
    throw Error(ErrorKind::config, "cooperative-kfac requires mode gr");
  if (config.precondition.kind == PreconditionKind::exact && config.mode == TrainMode::olne)
    throw Error(ErrorKind::config, "exact curvature needs a value recursion (mode fne or gr)");
  if (config.guard_halvings < 0) throw Error(ErrorKind::config, "guard_halvings must be nonnegative");
}

Vector split_fictitious(const NetworkGraph& graph, const Vector& params, int copies) {
  if (!graph.is_chain()) throw Error(ErrorKind::not_a_chain, "fictitious players need a chain network");
  return split_params(graph, params, copies);
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(NetworkGraph graph, OptimizerConfig config)
    : graph_(std::move(graph)), config_(std::move(config)), rng_(config_.seed ^ 0x9e3779b97f4a7c15ULL) {
  graph_.validate();
  validate(config_, graph_);
  alignments_ = enumerate_alignments(graph_);
  if (config_.strategy == AlignmentStrategy::adaptive && alignments_.size() < 2)
    throw Error(ErrorKind::config, "adaptive alignment needs at least two alignments");
  if (config_.alignment < 0 || config_.alignment >= static_cast<int>(alignments_.size()))
    throw Error(ErrorKind::config, "alignment index out of range");
  for (const Alignment& a : alignments_)
    games_.push_back(std::make_unique<StagedGame>(graph_, a, config_.players_split));
  params_ = he_uniform_init(graph_, config_.seed);
  if (config_.players_split > 1) params_ = split_fictitious(graph_, params_, config_.players_split);
  bank_ = std::make_unique<PreconditionerBank>(config_.precondition, config_.lr.base);
}

void Trainer::set_params(Vector params) {
  if (params.size() != params_.size()) throw Error(ErrorKind::dimension_mismatch, "parameter store size");
  params_ = std::move(params);
}

Vector Trainer::effective() const { return effective_params(graph_, games_.front()->layout(), params_); }

Matrix Trainer::predict(const Matrix& x) const { return dag_forward(graph_, effective(), x); }

namespace {

double batch_accuracy(const Matrix& logits, const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  const Eigen::VectorXi best = kernels::column_argmax(logits);
  int hits = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) hits += best(static_cast<Eigen::Index>(b)) == labels[b];
  return static_cast<double>(hits) / labels.size();
}

}  // namespace

double Trainer::accuracy(const Split& split) const { return batch_accuracy(predict(split.x), split.y); }

double Trainer::loss(const Split& split) const {
  return TerminalLoss::cross_entropy(split.y).value(predict(split.x));
}

StepMetrics Trainer::step(const Matrix& x, const std::vector<int>& labels, int alignment) {
  return step(x, TerminalLoss::cross_entropy(labels), alignment);
}

StepMetrics Trainer::step(const Matrix& x, const TerminalLoss& loss, int alignment) {
  const StagedGame& game = *games_.at(alignment);
  const double lr = config_.lr.at(iteration_);
  bank_->set_learning_rate(lr);
  if (alignment != bound_alignment_) {
    std::vector<std::vector<int>> keys(game.horizon()), slots(game.horizon());
    for (int t = 0; t < game.horizon(); ++t) {
      const auto players = game.stage_players(t);
      for (int p = 0; p < static_cast<int>(players.size()); ++p) {
        const auto [node, copy] = game.player_node(t, p);
        keys[t].push_back(node * game.copies() + copy);
        slots[t].push_back(players[p].slot);
      }
    }
    bank_->bind(keys, slots);
    bound_alignment_ = alignment;
  }

  CostModel cost;
  cost.terminal = loss;
  cost.weight_decay = config_.weight_decay;
  cost.group = config_.group;

  StepMetrics metrics;
  const Trajectory traj = game.forward(params_, x);
  metrics.loss = loss.value(traj.states.back());
  metrics.accuracy = batch_accuracy(traj.states.back(), loss.labels());
  if (!std::isfinite(metrics.loss)) throw Error(ErrorKind::non_finite_loss, "batch loss is not finite");
  const Linearization lin = game.linearize(params_, traj);
  const int singular_before = bank_->singular_events();

  GainSchedule gains;
  if (config_.mode == TrainMode::olne) {
    const OlneResult olne = olne_backward(lin, params_, cost);
    gains.mode = GainMode::olne;
    gains.stages.resize(lin.horizon());
    for (int t = 0; t < lin.horizon(); ++t) {
      const LinearizedStage& stage = *lin.stages[t];
      for (int p = 0; p < static_cast<int>(stage.players().size()); ++p) {
        bank_->prepare(stage, t, p, cost.decay(t, stage.players()[p].slot), olne.costates[t + 1], Matrix());
        gains.stages[t].open.push_back(bank_->solve_open(p, bank_->observe(p, olne.gradients[t][p])));
        gains.stages[t].feedback.emplace_back();
      }
    }
  } else {
    BackwardOptions options;
    options.damping = config_.damping;
    options.zero_feedback = config_.zero_feedback;
    options.coupling = config_.coupling;
    options.first_stage_feedback = config_.first_stage_feedback;
    options.initial_value = false;
    if (config_.state_curvature.mode == StateCurvatureMode::gauss_newton) {
      options.sample_gauss_newton = true;
    } else if (config_.state_curvature.mode == StateCurvatureMode::top_eigen) {
      const StateCurvatureApprox approx = config_.state_curvature;
      options.compress = [approx](const Matrix& second, const Matrix& first) {
        return compress_state_curvature(second, approx, first);
      };
    }
    if (config_.mode == TrainMode::fne) {
      FneResult res = fne_backward(lin, params_, cost, *bank_, options);
      gains = std::move(res.gains);
    } else {
      GrResult res = gr_backward(lin, params_, cost, *bank_, options);
      gains = std::move(res.gains);
      metrics.fallbacks = res.stats.fallbacks;
      metrics.singular += res.stats.singular;
    }
  }
  metrics.singular += bank_->singular_events() - singular_before;

  double open_total = 0.0;
  long open_count = 0;
  double feedback_total = 0.0;
  int feedback_count = 0;
  for (const StageGains& s : gains.stages) {
    for (const Vector& k : s.open) {
      open_total += k.cwiseAbs().sum();
      open_count += k.size();
    }
    for (const FeedbackGain& K : s.feedback) {
      if (K.empty()) continue;
      feedback_total += std::sqrt(K.squared_norm());
      ++feedback_count;
    }
  }
  metrics.mean_open = open_count ? open_total / open_count : 0.0;
  metrics.mean_feedback = feedback_count ? feedback_total / feedback_count : 0.0;
  if (!config_.apply_feedback)
    for (StageGains& s : gains.stages) s.feedback.assign(s.feedback.size(), FeedbackGain());

  if (config_.mode == TrainMode::olne) {
    Vector next = params_;
    for (int t = 0; t < lin.horizon(); ++t) {
      const auto& players = lin.stages[t]->players();
      for (std::size_t p = 0; p < players.size(); ++p)
        next.segment(players[p].offset, players[p].size) -= gains.stages[t].open[p];
    }
    metrics.step_size = lr;
    if (next.allFinite()) {
      params_ = std::move(next);
    } else {
      metrics.skipped = true;
      ++guard_count_;
    }
  } else {
    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h <= config_.guard_halvings && !accepted; ++h, step *= 0.5) {
      try {
        FeedbackResult fb = feedback_forward(game, params_, gains, traj.states, step);
        if (!std::isfinite(loss.value(fb.states.back())) || !fb.params.allFinite()) {
          metrics.halvings = h + 1;
          continue;
        }
        params_ = std::move(fb.params);
        metrics.halvings = h;
        metrics.step_size = lr * step;
        accepted = true;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::non_finite_state) throw;
        metrics.halvings = h + 1;
      }
    }
    if (!accepted) metrics.skipped = true;
    if (metrics.halvings > 0 || metrics.skipped) ++guard_count_;
  }
  ++iteration_;
  return metrics;
}

// ---------------------------------------------------------------------------
// Experiment loop

RunReport run_experiment(const NetworkGraph& graph, const OptimizerConfig& config, const Dataset& data,
                         const RunOptions& options) {
  if (data.train.size() == 0) throw Error(ErrorKind::invalid_argument, "empty training split");
  Trainer trainer(graph, config);
  const int arms = static_cast<int>(trainer.alignments().size());
  RunReport report;
  report.strategy = to_string(config.strategy);
  report.pulls.assign(arms, 0);
  std::unique_ptr<Exp3pp> bandit;
  if (config.strategy == AlignmentStrategy::adaptive) bandit = std::make_unique<Exp3pp>(arms, config.seed + 1);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };
  auto emit = [&](const MetricRecord& r) {
    report.records.push_back(r);
    if (options.sink) options.sink(r);
  };

  MetricRecord initial;
  initial.alignment = config.alignment;
  initial.step_size = config.lr.at(0);
  if (options.evaluate_train) {
    initial.train_loss = trainer.loss(data.train);
    initial.train_acc = trainer.accuracy(data.train);
  }
  if (data.val.size() > 0) initial.val_acc = trainer.accuracy(data.val);
  report.initial_val_acc = initial.val_acc;
  initial.wall_ms = elapsed();
  emit(initial);

  std::vector<int> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), trainer.rng());
  std::size_t cursor = 0;
  const int batch = std::min(config.batch_size, data.train.size());
  const int period = std::max(1, options.log_period);

  double loss_sum = 0.0, acc_sum = 0.0, open_sum = 0.0, feedback_sum = 0.0;
  int window = 0;
  for (int it = 0; it < config.max_iterations; ++it) {
    if (cursor + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), trainer.rng());
      cursor = 0;
    }
    const std::vector<int> index(order.begin() + cursor, order.begin() + cursor + batch);
    cursor += batch;
    const Split samples = data.train.subset(index);

    int alignment = config.alignment;
    if (config.strategy == AlignmentStrategy::random)
      alignment = std::uniform_int_distribution<int>(0, arms - 1)(trainer.rng());
    else if (bandit)
      alignment = bandit->sample().arm;

    StepMetrics m;
    try {
      m = trainer.step(samples.x, samples.y, alignment);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::non_finite_state && e.kind() != ErrorKind::non_finite_loss &&
          e.kind() != ErrorKind::non_finite_value)
        throw;
      report.diverged = true;
      report.error = e.what();
      MetricRecord r;
      r.iteration = it + 1;
      r.train_loss = std::numeric_limits<double>::quiet_NaN();
      r.guard_count = trainer.guard_count();
      r.alignment = alignment;
      r.wall_ms = elapsed();
      emit(r);
      break;
    }
    ++report.pulls[alignment];
    report.skipped += m.skipped;
    report.singular += m.singular;
    report.fallbacks += m.fallbacks;
    if (bandit) {
      const double reward = options.reward ? options.reward(alignment, it) : trainer.accuracy(data.val);
      bandit->update(alignment, reward);
    }
    loss_sum += m.loss;
    acc_sum += m.accuracy;
    open_sum += m.mean_open;
    feedback_sum += m.mean_feedback;
    ++window;
    report.iterations = it + 1;
    if ((it + 1) % period == 0 || it + 1 == config.max_iterations) {
      MetricRecord r;
      r.iteration = it + 1;
      r.train_loss = loss_sum / window;
      r.train_acc = acc_sum / window;
      r.val_acc = data.val.size() > 0 ? trainer.accuracy(data.val) : 0.0;
      r.step_size = m.step_size;
      r.mean_open = open_sum / window;
      r.mean_feedback = feedback_sum / window;
      r.guard_count = trainer.guard_count();
      r.alignment = alignment;
      r.wall_ms = elapsed();
      emit(r);
      loss_sum = acc_sum = open_sum = feedback_sum = 0.0;
      window = 0;
    }
  }

  if (options.evaluate_train) {
    report.final_train_loss = trainer.loss(data.train);
    report.final_train_acc = trainer.accuracy(data.train);
  }
  if (data.val.size() > 0) report.final_val_acc = trainer.accuracy(data.val);
  if (data.test.size() > 0) report.final_test_acc = trainer.accuracy(data.test);
  report.guard_count = trainer.guard_count();
  report.wall_ms = elapsed();
  return report;
}

}  // namespace dgnopt
