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

#include "dgnopt/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dgnopt/error.hpp"

namespace dgnopt {

Exp3pp::Exp3pp(int arms, std::uint64_t seed, double gap_constant)
    : arms_(arms), gap_constant_(gap_constant), losses_(static_cast<std::size_t>(std::max(arms, 0)), 0.0), rng_(seed) {
  if (arms < 1) throw Error(ErrorKind::invalid_argument, "a bandit needs at least one arm");
}

double Exp3pp::learning_rate() const {
  if (arms_ == 1) return 0.0;
  return 0.5 * std::sqrt(std::log(static_cast<double>(arms_)) / (static_cast<double>(round_) * arms_));
}

std::vector<double> Exp3pp::gap_estimates() const {
  const double k = round_;
  const double best = *std::min_element(losses_.begin(), losses_.end());
  std::vector<double> gaps(arms_);
  for (int m = 0; m < arms_; ++m) gaps[m] = std::clamp((losses_[m] - best) / k, 1.0 / std::sqrt(k), 1.0);
  return gaps;
}

std::vector<double> Exp3pp::floors() const {
  std::vector<double> eps(arms_, 0.0);
  if (arms_ == 1) return eps;
  const double k = round_;
  const double cap = std::min(0.5 / arms_, learning_rate());
  const std::vector<double> gaps = gap_estimates();
  for (int m = 0; m < arms_; ++m) {
    const double xi = gap_constant_ * std::log(k) / (k * gaps[m] * gaps[m]);
    eps[m] = std::min(cap, xi);
  }
  return eps;
}

std::vector<double> Exp3pp::probabilities() const {
  std::vector<double> rho(arms_, 1.0);
  if (arms_ == 1) return rho;
  const double eta = learning_rate();
  const double best = *std::min_element(losses_.begin(), losses_.end());
  double total = 0.0;
  for (int m = 0; m < arms_; ++m) total += rho[m] = std::exp(-eta * (losses_[m] - best));
  const std::vector<double> eps = floors();
  double eps_total = 0.0;
  for (double e : eps) eps_total += e;
  for (int m = 0; m < arms_; ++m) rho[m] = (1.0 - eps_total) * rho[m] / total + eps[m];
  return rho;
}

Exp3pp::Draw Exp3pp::sample() {
  if (pending_) throw Error(ErrorKind::out_of_order_update, "sample() called twice without update()");
  const std::vector<double> rho = probabilities();
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  double acc = 0.0;
  int arm = arms_ - 1;
  for (int m = 0; m < arms_; ++m) {
    acc += rho[m];
    if (u < acc) {
      arm = m;
      break;
    }
  }
  last_ = {arm, rho[arm]};
  pending_ = true;
  return last_;
}

void Exp3pp::update(int arm, double reward) {
  if (!pending_ || arm != last_.arm)
    throw Error(ErrorKind::out_of_order_update, "update for arm " + std::to_string(arm) + " without a matching sample");
  if (std::isnan(reward)) throw Error(ErrorKind::invalid_argument, "bandit reward is NaN");
  const double r = std::clamp(reward, 0.0, 1.0);
  losses_[arm] += (1.0 - r) / last_.probability;
  ++round_;
  pending_ = false;
}

}  // namespace dgnopt
