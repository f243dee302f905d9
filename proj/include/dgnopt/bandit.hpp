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
#include <random>
#include <vector>

namespace dgnopt {

/// EXP3++ adversarial bandit over a fixed set of arms with losses in [0, 1].
///
/// sample() and update() must alternate.
class Exp3pp {
 public:
  struct Draw {
    int arm = 0;
    double probability = 1.0;
  };

  explicit Exp3pp(int arms, std::uint64_t seed = 0, double gap_constant = 18.0);

  int arms() const { return arms_; }
  /// Current round, starting at 1.
  int round() const { return round_; }
  const std::vector<double>& losses() const { return losses_; }

  /// Sampling distribution and exploration floors of the current round.
  std::vector<double> probabilities() const;
  std::vector<double> floors() const;
  double learning_rate() const;
  std::vector<double> gap_estimates() const;

  Draw sample();
  /// Importance-weighted loss (1 - r) / p for the sampled arm; r is clamped to [0, 1].
  void update(int arm, double reward);

 private:
  int arms_;
  double gap_constant_;
  int round_ = 1;
  std::vector<double> losses_;
  std::mt19937_64 rng_;
  bool pending_ = false;
  Draw last_;
};

}  // namespace dgnopt
