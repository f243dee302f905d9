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

#include "dgnopt/error.hpp"
#include "dgnopt/netgraph.hpp"
#include "support.hpp"

using namespace dgnopt;
using dgnopt::testing::micro_net;
using dgnopt::testing::random_matrix;

namespace {

std::vector<NetworkGraph> presets() {
  return {make_chain(3, {5, 4, 2}), make_residual_micro(3, 6, 3, 2, Shortcut::identity),
          make_residual_micro(3, 6, 2, 3, Shortcut::dense), make_inception_micro(4, 5, 3),
          make_two_path_block(3, 4, 2)};
}

}  // namespace

TEST_CASE("graph validation rejects malformed structure") {
  NetworkGraph g(3);
  const int a = g.add(LayerSpec::dense(3, 4, Activation::relu), {NetworkGraph::kSource});
  g.add(LayerSpec::dense(5, 2), {a});
  CHECK_THROWS_AS(g.validate(), Error);  // width mismatch
  NetworkGraph h(3);
  h.add(LayerSpec::dense(3, 4), {NetworkGraph::kSource});
  h.add(LayerSpec::add(4), {0, 7});
  CHECK_THROWS_AS(h.validate(), Error);  // unknown producer
}

TEST_CASE("staged forward reproduces direct evaluation under every alignment") {
  for (const NetworkGraph& graph : presets()) {
    const Vector params = he_uniform_init(graph, 3);
    const Matrix x = random_matrix(graph.input_dim(), 6, 4);
    const Matrix direct = dag_forward(graph, params, x);
    const std::vector<Alignment> all = enumerate_alignments(graph);
    REQUIRE_FALSE(all.empty());
    CHECK(all.front() == canonical_alignment(graph));
    for (const Alignment& a : all) {
      validate_alignment(graph, a);
      const StagedGame game(graph, a);
      CHECK(relative_error(game.forward(params, x).states.back(), direct) < 1e-14);
    }
  }
}

TEST_CASE("residual blocks with identity shortcuts admit two placements each") {
  CHECK(enumerate_alignments(make_residual_micro(4, 8, 3, 2, Shortcut::identity)).size() == 8);
  CHECK(enumerate_alignments(make_chain(2, {3, 2})).size() == 1);
}

TEST_CASE("alignment validation catches stage order violations") {
  const NetworkGraph graph = make_chain(2, {3, 3, 2});
  Alignment a = canonical_alignment(graph);
  std::swap(a.slots[0], a.slots[1]);
  CHECK_THROWS_AS(validate_alignment(graph, a), Error);
}

TEST_CASE("split parameters sum back to the original") {
  const NetworkGraph graph = make_chain(3, {4, 2});
  const Vector params = he_uniform_init(graph, 5);
  const ParamLayout layout(graph, 3);
  const Vector store = split_params(graph, params, 3);
  REQUIRE(store.size() == 3 * params.size());
  CHECK(relative_error(effective_params(graph, layout, store), params) < 1e-15);
  const StagedGame game(graph, canonical_alignment(graph), 3);
  const Matrix x = random_matrix(3, 4, 6);
  CHECK(relative_error(game.forward(store, x).states.back(), dag_forward(graph, params, x)) < 1e-14);
}

TEST_CASE("stage jacobians match finite differences and the structured operators") {
  for (int id = 0; id < 4; ++id) {
    const NetworkGraph graph = micro_net(id, 50 + id);
    const StagedGame game(graph, canonical_alignment(graph));
    const Vector params = he_uniform_init(graph, 60 + id);
    const Matrix x0 = dgnopt::testing::kink_safe_input(game, params, 3, 70 + id, 0.01);
    const Trajectory traj = game.forward(params, x0, true);
    const Linearization lin = game.linearize(params, traj);
    for (int t = 0; t < game.horizon(); ++t) {
      const dgnopt::testing::FdStage fd = dgnopt::testing::fd_stage(game, t, traj.states[t], params);
      const LinearizedStage& stage = *lin.stages[t];
      const auto dense = materialize(stage);
      const Matrix m = [&] {
        const Matrix r = random_matrix(stage.next_dim(), stage.next_dim(), 80 + t);
        return Matrix(r * r.transpose());
      }();
      Matrix gram = Matrix::Zero(stage.state_dim(), stage.state_dim());
      for (int b = 0; b < 3; ++b) {
        INFO("net " << id << " stage " << t << " sample " << b);
        CHECK(relative_error(traj.jac_state[t][b], fd.fx[b]) < 1e-7);
        CHECK(relative_error(dense->state_jacobian(b), fd.fx[b]) < 1e-7);
        for (std::size_t p = 0; p < stage.players().size(); ++p)
          CHECK(relative_error(dense->param_jacobian(static_cast<int>(p), b), fd.ftheta[p][b]) < 1e-7);
        gram += fd.fx[b].transpose() * m * fd.fx[b] / 3.0;
      }
      CHECK(relative_error(stage.state_gram(m), gram) < 1e-7);
      for (std::size_t p = 0; p < stage.players().size(); ++p) {
        const int q = static_cast<int>(p);
        CHECK(relative_error(stage.param_state_gram(q, m), dense->param_state_gram(q, m)) < 1e-12);
        CHECK(relative_error(stage.param_gram(q, q, m), dense->param_gram(q, q, m)) < 1e-12);
        const Matrix g = random_matrix(stage.next_dim(), 3, 90 + t);
        CHECK(relative_error(stage.param_vjp_samples(q, g), dense->param_vjp_samples(q, g)) < 1e-12);
      }
    }
  }
}
