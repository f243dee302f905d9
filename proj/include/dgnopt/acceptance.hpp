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

#include <functional>
#include <string>
#include <vector>

/// End-to-end checks of the library, one per acceptance criterion.
namespace dgnopt::acceptance {

struct Result {
  int id = 0;
  std::string title;
  bool passed = false;
  int checks = 0;  // individual comparisons made
  int failures = 0;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;  // 0 when untimed
};

struct Options {
  std::vector<int> only;  // empty runs every criterion
  std::function<void(const Result&)> progress;
};

int criterion_count();
std::string title(int id);
Result run_criterion(int id);
std::vector<Result> run_all(const Options& options = {});
/// "PASS  6  <title>  (<detail>, <seconds>s)"
std::string format(const Result& result);

}  // namespace dgnopt::acceptance
