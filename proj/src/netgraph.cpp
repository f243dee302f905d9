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

#include "dgnopt/netgraph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "dgnopt/error.hpp"
#include "dgnopt/kernels.hpp"

namespace dgnopt {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::activation: return "activation";
    case LayerKind::add: return "add";
    case LayerKind::concat: return "concat";
    case LayerKind::split: return "split";
    case LayerKind::scale: return "scale";
  }
  return "?";
}

const char* to_string(Activation act) {
  switch (act) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

double activate(Activation act, double a) {
  switch (act) {
    case Activation::identity: return a;
    case Activation::relu: return a > 0.0 ? a : 0.0;
    case Activation::tanh: return std::tanh(a);
  }
  return a;
}

double activate_derivative(Activation act, double a) {
  switch (act) {
    case Activation::identity: return 1.0;
    case Activation::relu: return a > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(a);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

LayerSpec LayerSpec::dense(int in, int out, Activation act) {
  return {LayerKind::dense, act, in, out, 1.0, 0};
}
LayerSpec LayerSpec::elementwise(int dim, Activation act) {
  return {LayerKind::activation, act, dim, dim, 1.0, 0};
}
LayerSpec LayerSpec::add(int dim, Activation act) { return {LayerKind::add, act, dim, dim, 1.0, 0}; }
LayerSpec LayerSpec::concat(int out) {
  return {LayerKind::concat, Activation::identity, out, out, 1.0, 0};
}
LayerSpec LayerSpec::split(int in, int offset, int out) {
  return {LayerKind::split, Activation::identity, in, out, 1.0, offset};
}
LayerSpec LayerSpec::scale(int dim, double factor, Activation act) {
  return {LayerKind::scale, act, dim, dim, factor, 0};
}

// ---------------------------------------------------------------------------
// NetworkGraph

NetworkGraph::NetworkGraph(int input_dim) : input_dim_(input_dim) {
  if (input_dim <= 0) throw Error(ErrorKind::dimension_mismatch, "input dimension must be positive");
}

int NetworkGraph::add(const LayerSpec& spec, std::vector<int> inputs) {
  nodes_.push_back({spec, std::move(inputs)});
  return size() - 1;
}

std::vector<std::vector<int>> NetworkGraph::consumers() const {
  std::vector<std::vector<int>> out(size());
  for (int v = 0; v < size(); ++v)
    for (int u : nodes_[v].inputs)
      if (u != kSource && u >= 0 && u < size()) out[u].push_back(v);
  for (auto& c : out) {
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
  }
  return out;
}

std::vector<Edge> NetworkGraph::edges() const {
  std::vector<Edge> out;
  for (int v = 0; v < size(); ++v)
    for (int s = 0; s < static_cast<int>(nodes_[v].inputs.size()); ++s)
      out.push_back({nodes_[v].inputs[s], v, s});
  return out;
}

std::vector<int> NetworkGraph::topological_order() const {
  std::vector<int> indegree(size(), 0);
  for (int v = 0; v < size(); ++v)
    for (int u : nodes_[v].inputs) {
      if (u != kSource && (u < 0 || u >= size()))
        throw Error(ErrorKind::dimension_mismatch,
                    "node " + std::to_string(v) + " reads unknown node " + std::to_string(u));
      if (u != kSource) ++indegree[v];
    }
  const auto next = consumers();
  std::vector<int> order;
  std::vector<int> ready;
  for (int v = 0; v < size(); ++v)
    if (indegree[v] == 0) ready.push_back(v);
  while (!ready.empty()) {
    std::sort(ready.begin(), ready.end(), std::greater<>());
    const int v = ready.back();
    ready.pop_back();
    order.push_back(v);
    for (int c : next[v]) {
      const int uses = static_cast<int>(std::count(nodes_[c].inputs.begin(), nodes_[c].inputs.end(), v));
      indegree[c] -= uses;
      if (indegree[c] == 0) ready.push_back(c);
    }
  }
  if (static_cast<int>(order.size()) != size()) throw Error(ErrorKind::cyclic_graph, "graph has a cycle");
  return order;
}

void NetworkGraph::validate() const {
  if (nodes_.empty()) throw Error(ErrorKind::dimension_mismatch, "graph has no layers");
  topological_order();
  for (int v = 0; v < size(); ++v) {
    const Node& n = nodes_[v];
    const LayerSpec& s = n.spec;
    const std::string where = "node " + std::to_string(v) + " (" + to_string(s.kind) + ")";
    if (n.inputs.empty()) throw Error(ErrorKind::dimension_mismatch, where + " has no inputs");
    if (s.in_dim <= 0 || s.out_dim <= 0) throw Error(ErrorKind::dimension_mismatch, where + " has empty dims");
    auto single = [&] {
      if (n.inputs.size() != 1) throw Error(ErrorKind::dimension_mismatch, where + " takes one input");
      if (value_dim(n.inputs[0]) != s.in_dim)
        throw Error(ErrorKind::dimension_mismatch, where + " input dimension " +
                                                       std::to_string(value_dim(n.inputs[0])) +
                                                       " != " + std::to_string(s.in_dim));
    };
    switch (s.kind) {
      case LayerKind::dense: single(); break;
      case LayerKind::activation:
      case LayerKind::scale:
        single();
        if (s.in_dim != s.out_dim) throw Error(ErrorKind::dimension_mismatch, where + " must keep its dimension");
        break;
      case LayerKind::add:
        for (int u : n.inputs)
          if (value_dim(u) != s.out_dim)
            throw Error(ErrorKind::dimension_mismatch, where + " inputs must match its dimension");
        break;
      case LayerKind::concat: {
        int total = 0;
        for (int u : n.inputs) total += value_dim(u);
        if (total != s.out_dim) throw Error(ErrorKind::dimension_mismatch, where + " inputs do not sum to its dimension");
        break;
      }
      case LayerKind::split:
        single();
        if (s.offset < 0 || s.offset + s.out_dim > s.in_dim)
          throw Error(ErrorKind::dimension_mismatch, where + " slice out of range");
        break;
    }
  }
  sink();
}

int NetworkGraph::sink() const {
  const auto next = consumers();
  int found = -1;
  for (int v = 0; v < size(); ++v)
    if (next[v].empty()) {
      if (found >= 0) throw Error(ErrorKind::dimension_mismatch, "graph has more than one sink");
      found = v;
    }
  if (found < 0) throw Error(ErrorKind::cyclic_graph, "graph has no sink");
  return found;
}

int NetworkGraph::output_dim() const { return nodes_.at(sink()).spec.out_dim; }

int NetworkGraph::param_count() const {
  int total = 0;
  for (const Node& n : nodes_) total += n.spec.param_count();
  return total;
}

bool NetworkGraph::is_chain() const {
  for (int v = 0; v < size(); ++v) {
    const Node& n = nodes_[v];
    if (n.inputs.size() != 1) return false;
    if (n.inputs[0] != (v == 0 ? kSource : v - 1)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Presets

NetworkGraph make_chain(int input_dim, const std::vector<int>& widths, Activation hidden) {
  NetworkGraph g(input_dim);
  int prev = NetworkGraph::kSource;
  int dim = input_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool last = i + 1 == widths.size();
    prev = g.add(LayerSpec::dense(dim, widths[i], last ? Activation::identity : hidden), {prev});
    dim = widths[i];
  }
  return g;
}

NetworkGraph make_residual_micro(int input_dim, int width, int blocks, int classes, Shortcut shortcut) {
  NetworkGraph g(input_dim);
  int h = g.add(LayerSpec::dense(input_dim, width, Activation::relu), {NetworkGraph::kSource});
  for (int b = 0; b < blocks; ++b) {
    const int m1 = g.add(LayerSpec::dense(width, width, Activation::relu), {h});
    const int m2 = g.add(LayerSpec::dense(width, width), {m1});
    const int s = shortcut == Shortcut::dense ? g.add(LayerSpec::dense(width, width), {h})
                                              : g.add(LayerSpec::scale(width, 1.0), {h});
    h = g.add(LayerSpec::add(width, Activation::relu), {m2, s});
  }
  g.add(LayerSpec::dense(width, classes), {h});
  return g;
}

NetworkGraph make_inception_micro(int input_dim, int width, int classes) {
  NetworkGraph g(input_dim);
  const int stem = g.add(LayerSpec::dense(input_dim, width, Activation::relu), {NetworkGraph::kSource});
  const int b1 = g.add(LayerSpec::dense(width, width, Activation::relu), {stem});
  const int b2a = g.add(LayerSpec::dense(width, width, Activation::relu), {stem});
  const int b2b = g.add(LayerSpec::dense(width, width, Activation::relu), {b2a});
  const int b3a = g.add(LayerSpec::dense(width, width, Activation::tanh), {stem});
  const int b3b = g.add(LayerSpec::dense(width, width, Activation::relu), {b3a});
  const int b4a = g.add(LayerSpec::scale(width, 0.5), {stem});
  const int b4b = g.add(LayerSpec::dense(width, width, Activation::relu), {b4a});
  const int merged = g.add(LayerSpec::concat(4 * width), {b1, b2b, b3b, b4b});
  g.add(LayerSpec::dense(4 * width, classes), {merged});
  return g;
}

NetworkGraph make_two_path_block(int input_dim, int width, int classes) {
  NetworkGraph g(input_dim);
  const int a1 = g.add(LayerSpec::dense(input_dim, width, Activation::relu), {NetworkGraph::kSource});
  const int a2 = g.add(LayerSpec::dense(width, width), {a1});
  const int b1 = g.add(LayerSpec::dense(input_dim, width, Activation::tanh), {NetworkGraph::kSource});
  const int b2 = g.add(LayerSpec::dense(width, width), {b1});
  const int merged = g.add(LayerSpec::add(width, Activation::relu), {a2, b2});
  g.add(LayerSpec::dense(width, classes), {merged});
  return g;
}

// ---------------------------------------------------------------------------
// Alignments

std::vector<int> earliest_stages(const NetworkGraph& graph) {
  std::vector<int> earliest(graph.size(), 0);
  for (int v : graph.topological_order())
    for (int u : graph.node(v).inputs)
      if (u != NetworkGraph::kSource) earliest[v] = std::max(earliest[v], earliest[u] + 1);
  return earliest;
}

std::vector<int> latest_stages(const NetworkGraph& graph) {
  const auto earliest = earliest_stages(graph);
  const int sink = graph.sink();
  const auto next = graph.consumers();
  std::vector<int> latest(graph.size(), earliest[sink]);
  auto order = graph.topological_order();
  std::reverse(order.begin(), order.end());
  for (int v : order)
    for (int c : next[v]) latest[v] = std::min(latest[v], latest[c] - 1);
  return latest;
}

namespace {

Alignment assign_players(const NetworkGraph& graph, const std::vector<int>& stage, int stages) {
  Alignment a;
  a.stages = stages;
  a.slots.resize(graph.size());
  std::vector<int> filled(stages, 0);
  for (int v = 0; v < graph.size(); ++v) a.slots[v] = {stage[v], filled[stage[v]]++};
  a.players = *std::max_element(filled.begin(), filled.end());
  return a;
}

}  // namespace

Alignment canonical_alignment(const NetworkGraph& graph) {
  graph.validate();
  const auto earliest = earliest_stages(graph);
  return assign_players(graph, earliest, earliest[graph.sink()] + 1);
}

std::vector<Alignment> enumerate_alignments(const NetworkGraph& graph, int cap) {
  graph.validate();
  const auto order = graph.topological_order();
  const auto earliest = earliest_stages(graph);
  const auto latest = latest_stages(graph);
  const int stages = earliest[graph.sink()] + 1;
  std::vector<int> stage(graph.size(), 0);
  std::vector<Alignment> out;
  std::function<void(std::size_t)> place = [&](std::size_t i) {
    if (i == order.size()) {
      if (static_cast<int>(out.size()) >= cap)
        throw Error(ErrorKind::explosion_guard,
                    "more than " + std::to_string(cap) + " alignments");
      out.push_back(assign_players(graph, stage, stages));
      return;
    }
    const int v = order[i];
    int lo = 0;
    for (int u : graph.node(v).inputs)
      if (u != NetworkGraph::kSource) lo = std::max(lo, stage[u] + 1);
    for (int s = lo; s <= latest[v]; ++s) {
      stage[v] = s;
      place(i + 1);
    }
  };
  place(0);
  return out;
}

void validate_alignment(const NetworkGraph& graph, const Alignment& alignment) {
  graph.validate();
  auto fail = [](const std::string& m) { throw Error(ErrorKind::inconsistent_alignment, m); };
  if (static_cast<int>(alignment.slots.size()) != graph.size()) fail("one slot per node required");
  if (alignment.stages <= 0 || alignment.players <= 0) fail("empty stage or player range");
  std::map<std::pair<int, int>, int> used;
  for (int v = 0; v < graph.size(); ++v) {
    const Slot& s = alignment.slots[v];
    if (s.stage < 0 || s.stage >= alignment.stages || s.player < 0 || s.player >= alignment.players)
      fail("node " + std::to_string(v) + " slot out of range");
    if (!used.emplace(std::make_pair(s.stage, s.player), v).second)
      fail("two layers share stage " + std::to_string(s.stage) + " player " + std::to_string(s.player));
    for (int u : graph.node(v).inputs)
      if (u != NetworkGraph::kSource && alignment.slots[u].stage >= s.stage)
        fail("node " + std::to_string(v) + " at stage " + std::to_string(s.stage) +
             " reads node " + std::to_string(u) + " produced at stage " +
             std::to_string(alignment.slots[u].stage));
  }
  if (alignment.slots[graph.sink()].stage != alignment.stages - 1) fail("sink must sit at the last stage");
}

std::string describe(const NetworkGraph& graph, const Alignment& alignment) {
  std::ostringstream os;
  for (int t = 0; t < alignment.stages; ++t) {
    os << "  t=" << t << ":";
    for (int n = 0; n < alignment.players; ++n) {
      int found = -1;
      for (int v = 0; v < graph.size(); ++v)
        if (alignment.slots[v] == Slot{t, n}) found = v;
      if (found < 0) {
        os << " [dummy]";
        continue;
      }
      const LayerSpec& s = graph.node(found).spec;
      os << " [" << found << " " << to_string(s.kind) << " " << s.in_dim << "->" << s.out_dim;
      if (s.activation != Activation::identity && s.kind != LayerKind::activation)
        os << " " << to_string(s.activation);
      os << "]";
    }
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Parameters

ParamLayout::ParamLayout(const NetworkGraph& graph, int copies) : copies_(copies) {
  if (copies < 1) throw Error(ErrorKind::invalid_argument, "copies must be at least 1");
  for (int v = 0; v < graph.size(); ++v) {
    offsets_.push_back(size_);
    counts_.push_back(graph.node(v).spec.param_count());
    size_ += counts_.back() * copies;
  }
}

Vector he_uniform_init(const NetworkGraph& graph, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  ParamLayout layout(graph);
  Vector params = Vector::Zero(layout.size());
  for (int v = 0; v < graph.size(); ++v) {
    const LayerSpec& s = graph.node(v).spec;
    if (s.kind != LayerKind::dense) continue;
    const double bound = std::sqrt(6.0 / s.in_dim);
    const int stride = s.in_dim + 1;
    for (int i = 0; i < s.out_dim; ++i)
      for (int j = 0; j < s.in_dim; ++j) params[layout.offset(v) + i * stride + j] = bound * unit(rng);
  }
  return params;
}

Vector effective_params(const NetworkGraph& graph, const ParamLayout& layout, const Vector& params) {
  if (params.size() != layout.size()) throw Error(ErrorKind::dimension_mismatch, "parameter store size");
  if (layout.copies() == 1) return params;
  ParamLayout single(graph);
  Vector out = Vector::Zero(single.size());
  for (int v = 0; v < graph.size(); ++v)
    for (int c = 0; c < layout.copies(); ++c)
      out.segment(single.offset(v), single.count(v)) += params.segment(layout.offset(v, c), layout.count(v));
  return out;
}

Vector split_params(const NetworkGraph& graph, const Vector& unsplit, int copies) {
  ParamLayout single(graph);
  ParamLayout layout(graph, copies);
  if (unsplit.size() != single.size()) throw Error(ErrorKind::dimension_mismatch, "parameter store size");
  Vector out(layout.size());
  for (int v = 0; v < graph.size(); ++v)
    for (int c = 0; c < copies; ++c)
      out.segment(layout.offset(v, c), layout.count(v)) = unsplit.segment(single.offset(v), single.count(v)) / copies;
  return out;
}

// ---------------------------------------------------------------------------
// Forward

void eval_layer(const LayerSpec& spec, const double* theta, const std::vector<const Matrix*>& inputs,
                Matrix& pre, Matrix& out) {
  switch (spec.kind) {
    case LayerKind::dense:
      kernels::dense_forward(theta, spec.in_dim, spec.out_dim, *inputs[0], pre);
      break;
    case LayerKind::activation:
      pre = *inputs[0];
      break;
    case LayerKind::add:
      pre = *inputs[0];
      for (std::size_t i = 1; i < inputs.size(); ++i) pre += *inputs[i];
      break;
    case LayerKind::concat: {
      pre.resize(spec.out_dim, inputs[0]->cols());
      int row = 0;
      for (const Matrix* m : inputs) {
        pre.middleRows(row, m->rows()) = *m;
        row += static_cast<int>(m->rows());
      }
      break;
    }
    case LayerKind::split:
      pre = inputs[0]->middleRows(spec.offset, spec.out_dim);
      break;
    case LayerKind::scale:
      pre = spec.factor * *inputs[0];
      break;
  }
  if (spec.activation == Activation::identity || spec.kind == LayerKind::concat || spec.kind == LayerKind::split) {
    out = pre;
  } else {
    out = pre.unaryExpr([act = spec.activation](double a) { return activate(act, a); });
  }
}

namespace {

bool has_activation(const LayerSpec& s) {
  return s.activation != Activation::identity && s.kind != LayerKind::concat && s.kind != LayerKind::split;
}

}  // namespace

Matrix dag_forward(const NetworkGraph& graph, const Vector& effective, const Matrix& x0) {
  if (x0.rows() != graph.input_dim()) throw Error(ErrorKind::dimension_mismatch, "input dimension");
  ParamLayout layout(graph);
  if (effective.size() != layout.size()) throw Error(ErrorKind::dimension_mismatch, "parameter store size");
  std::vector<Matrix> values(graph.size());
  Matrix pre;
  for (int v : graph.topological_order()) {
    std::vector<const Matrix*> inputs;
    for (int u : graph.node(v).inputs) inputs.push_back(u == NetworkGraph::kSource ? &x0 : &values[u]);
    eval_layer(graph.node(v).spec, effective.data() + layout.offset(v), inputs, pre, values[v]);
  }
  return values[graph.sink()];
}

// ---------------------------------------------------------------------------
// Staged game

StagedGame::StagedGame(const NetworkGraph& graph, const Alignment& alignment, int copies)
    : graph_(std::make_shared<NetworkGraph>(graph)), alignment_(alignment), copies_(copies),
      layout_(graph, copies) {
  validate_alignment(graph, alignment);
  const int T = alignment.stages;
  const int sink = graph.sink();
  const auto next = graph.consumers();

  // A value enters the state after its producing stage and stays until its last consumer.
  auto avail = [&](int v) { return v == NetworkGraph::kSource ? 0 : alignment.slots[v].stage + 1; };
  std::vector<int> last(graph.size(), 0);
  int source_last = 0;
  for (int v = 0; v < graph.size(); ++v) {
    for (int u : graph.node(v).inputs) {
      if (u == NetworkGraph::kSource) source_last = std::max(source_last, alignment.slots[v].stage);
      else last[u] = std::max(last[u], alignment.slots[v].stage);
    }
  }
  last[sink] = T;

  std::vector<int> values{NetworkGraph::kSource};
  for (int v = 0; v < graph.size(); ++v) values.push_back(v);
  std::sort(values.begin(), values.end(), [&](int a, int b) {
    return std::make_pair(avail(a), a) < std::make_pair(avail(b), b);
  });

  segments_.resize(T + 1);
  dims_.resize(T + 1);
  for (int t = 0; t <= T; ++t) {
    int offset = 0;
    for (int v : values) {
      const int until = v == NetworkGraph::kSource ? source_last : last[v];
      if (avail(v) <= t && t <= until) {
        segments_[t].push_back({v, offset, graph.value_dim(v)});
        offset += graph.value_dim(v);
      }
    }
    if (offset > kMaxStateDim)
      throw Error(ErrorKind::dimension_mismatch, "state dimension " + std::to_string(offset) +
                                                     " at stage " + std::to_string(t) + " exceeds cap");
    dims_[t] = offset;
  }

  auto find = [&](int t, int v) {
    for (int i = 0; i < static_cast<int>(segments_[t].size()); ++i)
      if (segments_[t][i].value == v) return i;
    throw Error(ErrorKind::inconsistent_alignment,
                "value " + std::to_string(v) + " missing from state " + std::to_string(t));
  };

  plans_.resize(T);
  players_.resize(T);
  player_nodes_.resize(T);
  for (int t = 0; t < T; ++t) {
    StagePlan& plan = plans_[t];
    for (int v = 0; v < graph.size(); ++v) {
      if (alignment.slots[v].stage != t) continue;
      StageLayer layer{v, alignment.slots[v].player * copies, {}, find(t + 1, v)};
      for (int u : graph.node(v).inputs) layer.input_segments.push_back(find(t, u));
      plan.layers.push_back(layer);
    }
    for (int i = 0; i < static_cast<int>(segments_[t + 1].size()); ++i) {
      const int v = segments_[t + 1][i].value;
      if (v != NetworkGraph::kSource && alignment.slots[v].stage == t) continue;
      plan.carries.push_back({find(t, v), i});
    }
    std::vector<std::pair<PlayerInfo, std::pair<int, int>>> entries;
    for (const StageLayer& layer : plan.layers) {
      const int count = layout_.count(layer.node);
      if (count == 0) continue;
      for (int c = 0; c < copies; ++c)
        entries.push_back({{layer.slot + c, layout_.offset(layer.node, c), count}, {layer.node, c}});
    }
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first.slot < b.first.slot; });
    for (auto& [info, node] : entries) {
      players_[t].push_back(info);
      player_nodes_[t].push_back(node);
    }
  }
}

Matrix StagedGame::propagate_cached(int t, const Matrix& x, const Vector& effective,
                                    std::vector<LayerCache>* caches) const {
  if (x.rows() != dims_[t]) throw Error(ErrorKind::dimension_mismatch, "state dimension at stage " + std::to_string(t));
  ParamLayout single(*graph_);
  const StagePlan& plan = plans_[t];
  const auto& in = segments_[t];
  const auto& out = segments_[t + 1];
  Matrix next(dims_[t + 1], x.cols());
  if (caches) caches->assign(plan.layers.size(), {});
  Matrix pre, value;
  for (std::size_t l = 0; l < plan.layers.size(); ++l) {
    const StageLayer& layer = plan.layers[l];
    const LayerSpec& spec = graph_->node(layer.node).spec;
    std::vector<Matrix> slices;
    slices.reserve(layer.input_segments.size());
    for (int s : layer.input_segments) slices.emplace_back(x.middleRows(in[s].offset, in[s].dim));
    std::vector<const Matrix*> inputs;
    for (const Matrix& m : slices) inputs.push_back(&m);
    eval_layer(spec, effective.data() + single.offset(layer.node), inputs, pre, value);
    next.middleRows(out[layer.output_segment].offset, out[layer.output_segment].dim) = value;
    if (caches) {
      LayerCache& cache = (*caches)[l];
      if (spec.kind == LayerKind::dense) {
        cache.input.resize(spec.in_dim + 1, x.cols());
        cache.input.topRows(spec.in_dim) = slices[0];
        cache.input.row(spec.in_dim).setOnes();
      }
      if (has_activation(spec)) {
        cache.deriv = pre.unaryExpr([act = spec.activation](double a) { return activate_derivative(act, a); });
      }
      cache.pre = std::move(pre);
    }
  }
  for (const StageCarry& c : plan.carries)
    next.middleRows(out[c.to].offset, out[c.to].dim) = x.middleRows(in[c.from].offset, in[c.from].dim);
  return next;
}

Matrix StagedGame::propagate(int t, const Matrix& x, const Vector& params) const {
  return propagate_cached(t, x, effective_params(*graph_, layout_, params), nullptr);
}

Trajectory StagedGame::forward(const Vector& params, const Matrix& x0, bool with_jacobians) const {
  if (x0.rows() != graph_->input_dim()) throw Error(ErrorKind::dimension_mismatch, "input dimension");
  const Vector effective = effective_params(*graph_, layout_, params);
  Trajectory traj;
  traj.states.push_back(x0);
  traj.caches.resize(horizon());
  for (int t = 0; t < horizon(); ++t) {
    traj.states.push_back(propagate_cached(t, traj.states.back(), effective, &traj.caches[t]));
    if (!traj.states.back().allFinite())
      throw Error(ErrorKind::non_finite_state, "state " + std::to_string(t + 1) + " is not finite");
  }
  if (with_jacobians) {
    Linearization lin = linearize(params, traj);
    traj.has_jacobians = true;
    for (int t = 0; t < horizon(); ++t) {
      auto dense = materialize(*lin.stages[t]);
      std::vector<Matrix> fx;
      for (int b = 0; b < dense->batch(); ++b) fx.push_back(dense->state_jacobian(b));
      std::vector<std::vector<Matrix>> ftheta(players_[t].size());
      for (std::size_t p = 0; p < players_[t].size(); ++p)
        for (int b = 0; b < dense->batch(); ++b) ftheta[p].push_back(dense->param_jacobian(static_cast<int>(p), b));
      traj.jac_state.push_back(std::move(fx));
      traj.jac_param.push_back(std::move(ftheta));
    }
  }
  return traj;
}

namespace {

/// Stage Jacobian in the form diag(d_b) J with outer-product parameter blocks.
class NetworkStage final : public LinearizedStage {
 public:
  struct DensePlayer {
    std::shared_ptr<const Matrix> inputs;
    int out_offset = 0;
    int out_dim = 0;
    KroneckerView view;
  };

  NetworkStage(Matrix map, Matrix scale, std::vector<PlayerInfo> players, std::vector<DensePlayer> dense)
      : map_(std::move(map)), scale_(std::move(scale)), players_(std::move(players)), dense_(std::move(dense)) {
    for (DensePlayer& d : dense_) {
      d.view.inputs = d.inputs.get();
      d.view.out_scale = scale_.middleRows(d.out_offset, d.out_dim);
      d.view.out_offset = d.out_offset;
      d.view.out_dim = d.out_dim;
    }
  }

  int state_dim() const override { return static_cast<int>(map_.cols()); }
  int next_dim() const override { return static_cast<int>(map_.rows()); }
  int batch() const override { return static_cast<int>(scale_.cols()); }
  const std::vector<PlayerInfo>& players() const override { return players_; }

  Matrix state_jvp(const Matrix& dx) const override {
    Matrix mapped = map_ * dx;
    if (mapped.cols() == 1) return scale_.array().colwise() * mapped.col(0).array();
    return mapped.cwiseProduct(scale_);
  }

  Matrix state_vjp(const Matrix& g) const override { return map_.transpose() * g.cwiseProduct(scale_); }

  Matrix param_jvp(int p, const Vector& dtheta) const override {
    const DensePlayer& d = dense_[p];
    const int fan = static_cast<int>(d.inputs->rows());
    Matrix out = Matrix::Zero(next_dim(), batch());
    out.middleRows(d.out_offset, d.out_dim) =
        (unvec_rows(dtheta, d.out_dim, fan) * *d.inputs).cwiseProduct(d.view.out_scale);
    return out;
  }

  Vector param_vjp(int p, const Matrix& g) const override {
    const DensePlayer& d = dense_[p];
    Matrix local = g.middleRows(d.out_offset, d.out_dim).cwiseProduct(d.view.out_scale);
    return vec_rows(local * d.inputs->transpose());
  }

  Matrix param_vjp_samples(int p, const Matrix& g) const override {
    const DensePlayer& d = dense_[p];
    const int fan = static_cast<int>(d.inputs->rows());
    Matrix local = g.middleRows(d.out_offset, d.out_dim).cwiseProduct(d.view.out_scale);
    Matrix out(d.out_dim * fan, batch());
    for (int b = 0; b < batch(); ++b)
      for (int i = 0; i < d.out_dim; ++i) out.col(b).segment(i * fan, fan) = local(i, b) * d.inputs->col(b);
    return out;
  }

  Matrix state_gram(const Matrix& m) const override {
    Matrix moments = (scale_ * scale_.transpose()) / batch();
    return map_.transpose() * m.cwiseProduct(moments) * map_;
  }

  Matrix param_state_gram(int p, const Matrix& m) const override {
    const DensePlayer& d = dense_[p];
    return kernels::param_state_rows(*d.inputs, d.view.out_scale, scale_, m.middleRows(d.out_offset, d.out_dim), map_);
  }

  Matrix param_gram(int p, int q, const Matrix& m) const override {
    const DensePlayer& a = dense_[p];
    const DensePlayer& c = dense_[q];
    const int fa = static_cast<int>(a.inputs->rows());
    const int fc = static_cast<int>(c.inputs->rows());
    Matrix out(a.out_dim * fa, c.out_dim * fc);
    for (int i = 0; i < a.out_dim; ++i) {
      Matrix left = *a.inputs * a.view.out_scale.row(i).transpose().asDiagonal();
      for (int k = 0; k < c.out_dim; ++k) {
        Matrix right = *c.inputs * c.view.out_scale.row(k).transpose().asDiagonal();
        out.block(i * fa, k * fc, fa, fc) =
            (m(a.out_offset + i, c.out_offset + k) / batch()) * (left * right.transpose());
      }
    }
    return out;
  }

  const KroneckerView* kronecker(int p) const override { return &dense_[p].view; }

 private:
  Matrix map_;
  Matrix scale_;
  std::vector<PlayerInfo> players_;
  std::vector<DensePlayer> dense_;
};

}  // namespace

Linearization StagedGame::linearize(const Vector& params, const Trajectory& traj) const {
  if (static_cast<int>(traj.caches.size()) != horizon())
    throw Error(ErrorKind::dimension_mismatch, "trajectory does not match the game");
  const Vector effective = effective_params(*graph_, layout_, params);
  ParamLayout single(*graph_);
  const int batch = traj.batch();
  Linearization lin;
  lin.states = traj.states;
  lin.players = players();
  for (int t = 0; t < horizon(); ++t) {
    const auto& in = segments_[t];
    const auto& out = segments_[t + 1];
    Matrix map = Matrix::Zero(dims_[t + 1], dims_[t]);
    Matrix scale = Matrix::Ones(dims_[t + 1], batch);
    std::map<int, std::shared_ptr<const Matrix>> inputs_by_layer;
    for (std::size_t l = 0; l < plans_[t].layers.size(); ++l) {
      const StageLayer& layer = plans_[t].layers[l];
      const LayerSpec& spec = graph_->node(layer.node).spec;
      const LayerCache& cache = traj.caches[t][l];
      const int row = out[layer.output_segment].offset;
      switch (spec.kind) {
        case LayerKind::dense: {
          const double* theta = effective.data() + single.offset(layer.node);
          const int col = in[layer.input_segments[0]].offset;
          for (int i = 0; i < spec.out_dim; ++i)
            for (int j = 0; j < spec.in_dim; ++j) map(row + i, col + j) = theta[i * (spec.in_dim + 1) + j];
          inputs_by_layer[layer.node] = std::make_shared<const Matrix>(cache.input);
          break;
        }
        case LayerKind::activation:
        case LayerKind::add:
        case LayerKind::scale:
          for (int s : layer.input_segments)
            for (int i = 0; i < spec.out_dim; ++i) map(row + i, in[s].offset + i) += spec.factor;
          break;
        case LayerKind::concat: {
          int r = row;
          for (int s : layer.input_segments)
            for (int i = 0; i < in[s].dim; ++i) map(r++, in[s].offset + i) = 1.0;
          break;
        }
        case LayerKind::split: {
          const int col = in[layer.input_segments[0]].offset + spec.offset;
          for (int i = 0; i < spec.out_dim; ++i) map(row + i, col + i) = 1.0;
          break;
        }
      }
      if (has_activation(spec)) scale.middleRows(row, spec.out_dim) = cache.deriv;
    }
    for (const StageCarry& c : plans_[t].carries)
      for (int i = 0; i < in[c.from].dim; ++i) map(out[c.to].offset + i, in[c.from].offset + i) = 1.0;

    std::vector<NetworkStage::DensePlayer> dense;
    for (std::size_t p = 0; p < players_[t].size(); ++p) {
      const int node = player_nodes_[t][p].first;
      int seg = -1;
      for (const StageLayer& layer : plans_[t].layers)
        if (layer.node == node) seg = layer.output_segment;
      NetworkStage::DensePlayer d;
      d.inputs = inputs_by_layer.at(node);
      d.out_offset = out[seg].offset;
      d.out_dim = out[seg].dim;
      dense.push_back(std::move(d));
    }
    lin.stages.push_back(std::make_unique<NetworkStage>(std::move(map), std::move(scale), players_[t], std::move(dense)));
  }
  return lin;
}

}  // namespace dgnopt
