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
#include "dgnopt/trainer.hpp"

using namespace dgnopt;

namespace {

Dataset moons() {
  SplitSpec spec;
  spec.val = 60;
  spec.seed = 2;
  return split_dataset("moons", make_moons(400, 0.2, 1), 2, spec);
}

OptimizerConfig quick(TrainMode mode, PreconditionKind kind) {
  OptimizerConfig c;
  c.mode = mode;
  c.precondition.kind = kind;
  c.precondition.damping = 0.1;
  c.lr.base = 0.05;
  c.batch_size = 16;
  c.max_iterations = 30;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("step schedule multiplies at each milestone") {
  LrSchedule s{0.1, {10, 20}, 0.5};
  CHECK(s.at(0) == 0.1);
  CHECK(s.at(9) == 0.1);
  CHECK(s.at(10) == doctest::Approx(0.05));
  CHECK(s.at(25) == doctest::Approx(0.025));
}

TEST_CASE("fictitious copies sum back to the layer parameters") {
  const NetworkGraph chain = make_chain(2, {5, 2});
  const Vector params = he_uniform_init(chain, 3);
  const Vector split = split_fictitious(chain, params, 3);
  CHECK(split.size() == 3 * params.size());
  CHECK(relative_error(effective_params(chain, ParamLayout(chain, 3), split), params) < 1e-15);
  CHECK_THROWS_AS(split_fictitious(make_residual_micro(2, 4, 2, 2), he_uniform_init(make_residual_micro(2, 4, 2, 2), 1), 2),
                  Error);
}

TEST_CASE("configuration constraints") {
  const NetworkGraph chain = make_chain(2, {4, 2});
  const NetworkGraph residual = make_residual_micro(2, 4, 2, 2);
  OptimizerConfig c;
  CHECK_NOTHROW(validate(c, chain));
  c.players_split = 2;
  CHECK_NOTHROW(validate(c, chain));
  try {
    validate(c, residual);
    FAIL("fictitious players accepted on a residual network");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::not_a_chain);
  }
  c = {};
  c.precondition.kind = PreconditionKind::cooperative_kfac;
  c.mode = TrainMode::fne;
  CHECK_THROWS_AS(validate(c, chain), Error);
  c = {};
  c.mode = TrainMode::olne;
  c.precondition.kind = PreconditionKind::exact;
  CHECK_THROWS_AS(validate(c, chain), Error);
  c = {};
  c.lr.base = 0.0;
  CHECK_THROWS_AS(validate(c, chain), Error);
  c = {};
  c.strategy = AlignmentStrategy::adaptive;
  CHECK_THROWS_AS(Trainer(chain, c), Error);
  c = {};
  c.alignment = 5;
  CHECK_THROWS_AS(Trainer(chain, c), Error);
}

TEST_CASE("open-loop identity step is a gradient step") {
  const Dataset data = moons();
  OptimizerConfig c = quick(TrainMode::olne, PreconditionKind::identity);
  Trainer trainer(make_chain(2, {6, 2}), c);
  const Split batch = data.train.subset({0, 1, 2, 3, 4, 5, 6, 7});
  const Vector before = trainer.params();
  const StepMetrics m = trainer.step(batch.x, batch.y);
  CHECK(m.step_size == doctest::Approx(0.05));
  CHECK(m.mean_feedback == 0.0);
  CHECK((trainer.params() - before).norm() > 0.0);
  CHECK(trainer.iteration() == 1);
}

TEST_CASE("training runs are reproducible and learn") {
  const Dataset data = moons();
  const NetworkGraph net = make_residual_micro(2, 8, 2, 2);
  OptimizerConfig rmsprop = quick(TrainMode::fne, PreconditionKind::rmsprop);
  rmsprop.lr.base = 0.01;
  for (const OptimizerConfig& c : {quick(TrainMode::gr, PreconditionKind::kfac), rmsprop}) {
    OptimizerConfig longer = c;
    longer.max_iterations = 150;
    RunOptions options;
    options.log_period = 25;
    const RunReport a = run_experiment(net, longer, data, options);
    const RunReport b = run_experiment(net, longer, data, options);
    INFO(std::string(to_string(c.mode)) << " " << std::string(to_string(c.precondition.kind)));
    CHECK_FALSE(a.diverged);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      CHECK(a.records[i].train_loss == b.records[i].train_loss);
      CHECK(a.records[i].val_acc == b.records[i].val_acc);
      CHECK(a.records[i].mean_feedback == b.records[i].mean_feedback);
    }
    CHECK(a.final_test_acc == b.final_test_acc);
    CHECK(a.final_val_acc > 0.75);
  }
}

TEST_CASE("dropping feedback keeps the backward pass") {
  const Dataset data = moons();
  OptimizerConfig with = quick(TrainMode::fne, PreconditionKind::kfac);
  OptimizerConfig without = with;
  without.apply_feedback = false;
  const NetworkGraph net = make_chain(2, {6, 6, 2});
  Trainer a(net, with), b(net, without);
  const Split batch = data.train.subset({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  const StepMetrics ma = a.step(batch.x, batch.y), mb = b.step(batch.x, batch.y);
  CHECK(ma.mean_open == mb.mean_open);
  CHECK(ma.mean_feedback > 0.0);
  CHECK(ma.mean_feedback == mb.mean_feedback);
  CHECK((a.params() - b.params()).norm() > 0.0);
}
