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

#include "dgnopt/error.hpp"

namespace dgnopt {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::cyclic_graph: return "CyclicGraph";
    case ErrorKind::inconsistent_alignment: return "InconsistentAlignment";
    case ErrorKind::dimension_mismatch: return "DimensionMismatch";
    case ErrorKind::explosion_guard: return "ExplosionGuard";
    case ErrorKind::non_finite_state: return "NonFiniteState";
    case ErrorKind::non_finite_value: return "NonFiniteValue";
    case ErrorKind::non_finite_loss: return "NonFiniteLoss";
    case ErrorKind::singular_curvature: return "SingularCurvature";
    case ErrorKind::singular_factor: return "SingularFactor";
    case ErrorKind::singular_system: return "SingularSystem";
    case ErrorKind::uninitialized_state: return "UninitializedState";
    case ErrorKind::out_of_order_update: return "OutOfOrderUpdate";
    case ErrorKind::not_a_chain: return "NotAChain";
    case ErrorKind::bad_magic: return "BadMagic";
    case ErrorKind::truncated_file: return "TruncatedFile";
    case ErrorKind::label_range: return "LabelRangeError";
    case ErrorKind::config: return "ConfigError";
    case ErrorKind::io: return "IoError";
    case ErrorKind::invalid_argument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

}  // namespace dgnopt
