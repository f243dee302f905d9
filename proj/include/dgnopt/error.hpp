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

#include <stdexcept>
#include <string>

namespace dgnopt {

enum class ErrorKind {
  cyclic_graph,
  inconsistent_alignment,
  dimension_mismatch,
  explosion_guard,
  non_finite_state,
  non_finite_value,
  non_finite_loss,
  singular_curvature,
  singular_factor,
  singular_system,
  uninitialized_state,
  out_of_order_update,
  not_a_chain,
  bad_magic,
  truncated_file,
  label_range,
  config,
  io,
  invalid_argument,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace dgnopt
