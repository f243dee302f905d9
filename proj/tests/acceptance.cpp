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

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "dgnopt/acceptance.hpp"

/// Runs the acceptance criteria given as arguments (all when none) and prints one line per criterion.
int main(int argc, char** argv) {
  namespace acc = dgnopt::acceptance;
  acc::Options options;
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (id < 1 || id > acc::criterion_count()) {
      std::cerr << "unknown criterion '" << argv[i] << "'\n";
      return 2;
    }
    options.only.push_back(id);
  }
  options.progress = [](const acc::Result& r) { std::cout << acc::format(r) << std::endl; };
  bool all = true;
  for (const acc::Result& r : acc::run_all(options)) all = all && r.passed;
  return all ? 0 : 1;
}
