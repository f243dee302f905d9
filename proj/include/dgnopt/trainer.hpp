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
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dgnopt/bandit.hpp"
#include "dgnopt/curvature.hpp"
#include "dgnopt/data.hpp"
#include "dgnopt/game_core.hpp"
#include "dgnopt/netgraph.hpp"

namespace dgnopt {

enum class TrainMode { olne, fne, gr };
enum class AlignmentStrategy { fixed, random, adaptive };

const char* to_string(TrainMode mode);
const char* to_string(AlignmentStrategy strategy);
TrainMode parse_mode(const std::string& name);
AlignmentStrategy parse_strategy(const std::string& name);

/// Constant or multi-step decayed learning rate.
struct LrSchedule {
  double base = 0.1;
  std::vector<int> milestones;  // iterations where the rate is multiplied by factor
  double factor = 0.1;
  double at(int iteration) const;
  bool operator==(const LrSchedule&) const = default;
};

struct OptimizerConfig {
  TrainMode mode = TrainMode::gr;
  PreconditionPolicy precondition;
  LrSchedule lr;
  int players_split = 1;
  AlignmentStrategy strategy = AlignmentStrategy::fixed;
  int alignment = 0;  // index used by the fixed strategy
  std::uint64_t seed = 0;
  int batch_size = 128;
  int max_iterations = 100;
  double weight_decay = 0.0;

  // Game switches.
  double damping = 1e-3;  // Schur complements and joint systems
  bool zero_feedback = false;
  Coupling coupling = Coupling::exact;
  /// The feedback pass starts from the nominal input, so the stage-0 feedback gain is never applied.
  bool first_stage_feedback = false;
  StateCurvatureApprox state_curvature;
  GroupTerminal group = GroupTerminal::shared_once;
  /// Applies the feedback gains in the forward pass; false keeps the backward pass and drops K.
  bool apply_feedback = true;
  /// Step halvings tried when the feedback pass leaves the finite range; then the step is skipped.
  int guard_halvings = 5;

  bool operator==(const OptimizerConfig&) const = default;
};

/// Checks cross-field constraints against a graph.
void validate(const OptimizerConfig& config, const NetworkGraph& graph);

struct StepMetrics {
  double loss = 0.0;      // batch loss at the nominal parameters
  double accuracy = 0.0;  // batch accuracy at the nominal parameters
  double step_size = 0.0;
  double mean_open = 0.0;      // mean |k| over all entries
  double mean_feedback = 0.0;  // mean ‖K‖_F over players
  int halvings = 0;
  bool skipped = false;
  int singular = 0;
  int fallbacks = 0;
};

/// Parameters of `copies` fictitious players per layer of a chain.
Vector split_fictitious(const NetworkGraph& graph, const Vector& params, int copies);

/// Training state and step logic for one network.
class Trainer {
 public:
  Trainer(NetworkGraph graph, OptimizerConfig config);

  const NetworkGraph& graph() const { return graph_; }
  const OptimizerConfig& config() const { return config_; }
  const std::vector<Alignment>& alignments() const { return alignments_; }
  const StagedGame& game(int alignment) const { return *games_.at(alignment); }

  /// Player store; with fictitious players each layer owns `players_split` blocks.
  const Vector& params() const { return params_; }
  void set_params(Vector params);
  /// Inference parameters, the sum over fictitious copies.
  Vector effective() const;

  int iteration() const { return iteration_; }
  int guard_count() const { return guard_count_; }
  std::mt19937_64& rng() { return rng_; }
  const PreconditionerBank& bank() const { return *bank_; }

  /// One training iteration on a batch with the given terminal loss.
  StepMetrics step(const Matrix& x, const TerminalLoss& loss, int alignment = 0);
  StepMetrics step(const Matrix& x, const std::vector<int>& labels, int alignment = 0);

  Matrix predict(const Matrix& x) const;
  double accuracy(const Split& split) const;
  double loss(const Split& split) const;

 private:
  NetworkGraph graph_;
  OptimizerConfig config_;
  std::vector<Alignment> alignments_;
  std::vector<std::unique_ptr<StagedGame>> games_;
  Vector params_;
  std::unique_ptr<PreconditionerBank> bank_;
  std::mt19937_64 rng_;
  int iteration_ = 0;
  int guard_count_ = 0;
  int bound_alignment_ = -1;
};

struct MetricRecord {
  int iteration = 0;
  double wall_ms = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double step_size = 0.0;
  double mean_open = 0.0;
  double mean_feedback = 0.0;
  int guard_count = 0;
  int alignment = 0;
};

struct RunOptions {
  int log_period = 10;
  std::function<void(const MetricRecord&)> sink;
  /// Replaces validation accuracy as the bandit reward (testing hook).
  std::function<double(int alignment, int iteration)> reward;
  /// Skip full evaluation of the training split at iteration 0 and at the end.
  bool evaluate_train = true;
};

struct RunReport {
  std::string strategy;
  int iterations = 0;
  double initial_val_acc = 0.0;
  double final_train_acc = 0.0;
  double final_val_acc = 0.0;
  double final_test_acc = 0.0;
  double final_train_loss = 0.0;
  double wall_ms = 0.0;
  int guard_count = 0;
  int skipped = 0;
  int singular = 0;
  int fallbacks = 0;
  bool diverged = false;
  std::string error;  // what stopped a diverged run
  std::vector<int> pulls;  // iterations per alignment
  std::vector<MetricRecord> records;
};

RunReport run_experiment(const NetworkGraph& graph, const OptimizerConfig& config, const Dataset& data,
                         const RunOptions& options = {});

}  // namespace dgnopt
