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
#include <memory>
#include <string>
#include <vector>

#include "dgnopt/dynamics.hpp"
#include "dgnopt/linalg.hpp"

namespace dgnopt {

enum class LayerKind { dense, activation, add, concat, split, scale };
enum class Activation { identity, relu, tanh };

const char* to_string(LayerKind kind);
const char* to_string(Activation act);

double activate(Activation act, double a);
/// Derivative of the activation at pre-activation a; relu uses 0 at the kink.
double activate_derivative(Activation act, double a);

/// One layer of the network vocabulary.
///
/// `activation` is the function itself for the activation kind and an optional
/// fused output activation for dense, add and scale layers.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  Activation activation = Activation::identity;
  int in_dim = 0;
  int out_dim = 0;
  double factor = 1.0;  // scale
  int offset = 0;       // split: first kept coordinate

  int param_count() const { return kind == LayerKind::dense ? out_dim * (in_dim + 1) : 0; }

  static LayerSpec dense(int in, int out, Activation act = Activation::identity);
  static LayerSpec elementwise(int dim, Activation act);
  static LayerSpec add(int dim, Activation act = Activation::identity);
  static LayerSpec concat(int out);
  static LayerSpec split(int in, int offset, int out);
  static LayerSpec scale(int dim, double factor, Activation act = Activation::identity);
};

struct Node {
  LayerSpec spec;
  std::vector<int> inputs;  // producer ids in slot order; kSource is the network input
};

struct Edge {
  int producer = 0;
  int consumer = 0;
  int slot = 0;
};

class NetworkGraph {
 public:
  static constexpr int kSource = -1;

  explicit NetworkGraph(int input_dim);

  /// Appends a node and returns its id. Structure is checked by validate().
  int add(const LayerSpec& spec, std::vector<int> inputs);

  void validate() const;
  std::vector<int> topological_order() const;
  std::vector<std::vector<int>> consumers() const;  // indexed by node id
  std::vector<Edge> edges() const;

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_.at(id); }
  int input_dim() const { return input_dim_; }
  int output_dim() const;
  int sink() const;
  int value_dim(int id) const { return id == kSource ? input_dim_ : nodes_.at(id).spec.out_dim; }
  int param_count() const;
  bool is_chain() const;

 private:
  int input_dim_;
  std::vector<Node> nodes_;
};

NetworkGraph make_chain(int input_dim, const std::vector<int>& widths,
                        Activation hidden = Activation::relu);

enum class Shortcut { identity, dense };

NetworkGraph make_residual_micro(int input_dim, int width, int blocks, int classes,
                                 Shortcut shortcut = Shortcut::identity);

/// Stem, four parallel branches (one short, two two-layer, one scaled) merged by concat, then a head.
NetworkGraph make_inception_micro(int input_dim, int width, int classes);

/// Two parallel two-layer paths merged by add.
NetworkGraph make_two_path_block(int input_dim, int width, int classes);

/// Every node gets a (stage, player) slot.
struct Slot {
  int stage = 0;
  int player = 0;
  bool operator==(const Slot&) const = default;
};

struct Alignment {
  std::vector<Slot> slots;  // indexed by node id
  int stages = 0;
  int players = 0;
  bool operator==(const Alignment&) const = default;
};

std::vector<int> earliest_stages(const NetworkGraph& graph);
std::vector<int> latest_stages(const NetworkGraph& graph);
Alignment canonical_alignment(const NetworkGraph& graph);
/// All placements of slack nodes within their stage bounds, canonical first.
std::vector<Alignment> enumerate_alignments(const NetworkGraph& graph, int cap = 64);
void validate_alignment(const NetworkGraph& graph, const Alignment& alignment);
std::string describe(const NetworkGraph& graph, const Alignment& alignment);

/// Flat parameter store layout. Each parametric node owns `copies` consecutive blocks.
class ParamLayout {
 public:
  ParamLayout() = default;
  ParamLayout(const NetworkGraph& graph, int copies = 1);

  int size() const { return size_; }
  int copies() const { return copies_; }
  int offset(int node, int copy = 0) const { return offsets_.at(node) + copy * counts_.at(node); }
  int count(int node) const { return counts_.at(node); }

 private:
  std::vector<int> offsets_;
  std::vector<int> counts_;
  int copies_ = 1;
  int size_ = 0;
};

/// Uniform fan-in scaled weights, zero biases.
Vector he_uniform_init(const NetworkGraph& graph, std::uint64_t seed);

/// Effective per-node parameters: the sum over copies.
Vector effective_params(const NetworkGraph& graph, const ParamLayout& layout, const Vector& params);
/// Store with each node's parameters divided evenly among `copies`.
Vector split_params(const NetworkGraph& graph, const Vector& unsplit, int copies);

/// Evaluates one layer on a batch.
void eval_layer(const LayerSpec& spec, const double* theta, const std::vector<const Matrix*>& inputs,
                Matrix& pre, Matrix& out);

/// Direct evaluation of the DAG on a batch (columns are samples).
Matrix dag_forward(const NetworkGraph& graph, const Vector& effective, const Matrix& x0);

struct StateSegment {
  int value = 0;  // producing node id or kSource
  int offset = 0;
  int dim = 0;
};

struct StageLayer {
  int node = 0;
  int slot = 0;                   // base player slot
  std::vector<int> input_segments;  // indices into the stage-t layout
  int output_segment = 0;          // index into the stage-(t+1) layout
};

struct StageCarry {
  int from = 0;  // segment of x_t
  int to = 0;    // segment of x_{t+1}
};

struct StagePlan {
  std::vector<StageLayer> layers;
  std::vector<StageCarry> carries;
};

/// Per-layer forward caches of one stage.
struct LayerCache {
  Matrix input;   // dense: augmented input (fan_in + 1) x B; others: unused
  Matrix pre;     // pre-activation
  Matrix deriv;   // activation derivative at pre
};

struct Trajectory {
  std::vector<Matrix> states;                  // x_0 .. x_T
  std::vector<std::vector<LayerCache>> caches;  // [t][layer within stage]
  bool has_jacobians = false;
  std::vector<std::vector<Matrix>> jac_state;               // [t][sample]
  std::vector<std::vector<std::vector<Matrix>>> jac_param;  // [t][player][sample]

  int batch() const { return states.empty() ? 0 : static_cast<int>(states.front().cols()); }
};

class StagedGame : public StageDynamics {
 public:
  static constexpr int kMaxStateDim = 4096;

  StagedGame(const NetworkGraph& graph, const Alignment& alignment, int copies = 1);

  int horizon() const override { return static_cast<int>(plans_.size()); }
  int players() const override { return alignment_.players * copies_; }
  std::vector<PlayerInfo> stage_players(int t) const override { return players_.at(t); }
  Matrix propagate(int t, const Matrix& x, const Vector& params) const override;

  const NetworkGraph& graph() const { return *graph_; }
  const Alignment& alignment() const { return alignment_; }
  const ParamLayout& layout() const { return layout_; }
  int copies() const { return copies_; }
  int state_dim(int t) const { return dims_.at(t); }
  const std::vector<StateSegment>& segments(int t) const { return segments_.at(t); }
  const StagePlan& plan(int t) const { return plans_.at(t); }
  /// Node and copy of an actionable player.
  std::pair<int, int> player_node(int t, int p) const { return player_nodes_.at(t).at(p); }

  Trajectory forward(const Vector& params, const Matrix& x0, bool with_jacobians = false) const;
  Linearization linearize(const Vector& params, const Trajectory& traj) const;

 private:
  Matrix propagate_cached(int t, const Matrix& x, const Vector& effective,
                          std::vector<LayerCache>* caches) const;

  std::shared_ptr<const NetworkGraph> graph_;
  Alignment alignment_;
  int copies_ = 1;
  ParamLayout layout_;
  std::vector<std::vector<StateSegment>> segments_;  // per t = 0..T
  std::vector<int> dims_;
  std::vector<StagePlan> plans_;
  std::vector<std::vector<PlayerInfo>> players_;
  std::vector<std::vector<std::pair<int, int>>> player_nodes_;
};

}  // namespace dgnopt
