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

#include <numeric>

#include "dgnopt/bandit.hpp"
#include "dgnopt/error.hpp"

using namespace dgnopt;

TEST_CASE("bandit arguments and call order are checked") {
  CHECK_THROWS_AS(Exp3pp(0), Error);
  Exp3pp bandit(3, 1);
  CHECK_THROWS_AS(bandit.update(0, 1.0), Error);
  const Exp3pp::Draw d = bandit.sample();
  CHECK_THROWS_AS(bandit.sample(), Error);
  CHECK_THROWS_AS(bandit.update((d.arm + 1) % 3, 1.0), Error);
  bandit.update(d.arm, 1.0);
  CHECK(bandit.round() == 2);
}

TEST_CASE("first round samples uniformly with no exploration floor") {
  Exp3pp bandit(4, 2);
  for (double p : bandit.probabilities()) CHECK(p == doctest::Approx(0.25));
  for (double e : bandit.floors()) CHECK(e == 0.0);
  CHECK(bandit.learning_rate() == doctest::Approx(0.5 * std::sqrt(std::log(4.0) / 4.0)));
}

TEST_CASE("losses are importance weighted and rewards clamped") {
  Exp3pp bandit(2, 3);
  const Exp3pp::Draw d = bandit.sample();
  CHECK(d.probability == doctest::Approx(0.5));
  bandit.update(d.arm, 0.25);
  CHECK(bandit.losses()[d.arm] == doctest::Approx(1.5));
  CHECK(bandit.losses()[1 - d.arm] == 0.0);
  const Exp3pp::Draw e = bandit.sample();
  const double before = bandit.losses()[e.arm];
  bandit.update(e.arm, 7.0);
  CHECK(bandit.losses()[e.arm] == before);
  const Exp3pp::Draw f = bandit.sample();
  CHECK_THROWS_AS(bandit.update(f.arm, std::nan("")), Error);
}

TEST_CASE("a single arm is always drawn") {
  Exp3pp bandit(1, 4);
  for (int i = 0; i < 10; ++i) {
    const Exp3pp::Draw d = bandit.sample();
    CHECK(d.arm == 0);
    CHECK(d.probability == 1.0);
    bandit.update(0, 0.3);
  }
}

TEST_CASE("distribution stays normalized above its floors") {
  Exp3pp bandit(6, 5);
  for (int k = 0; k < 2000; ++k) {
    const std::vector<double> p = bandit.probabilities(), eps = bandit.floors();
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (int m = 0; m < 6; ++m) CHECK(p[m] >= eps[m] - 1e-15);
    const Exp3pp::Draw d = bandit.sample();
    bandit.update(d.arm, d.arm == 2 ? 0.9 : 0.2);
  }
}
