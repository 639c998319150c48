/*
 * Copyright (C) 2026 The dtformer authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "dtformer/errors.hpp"

namespace dtf {

const char* error_code_name(ErrorCode code) noexcept
{
  switch (code) {
  case ErrorCode::InvalidArgument: return "invalid_argument";
  case ErrorCode::InvalidScheme: return "invalid_scheme";
  case ErrorCode::InsufficientMeasurements: return "insufficient_measurements";
  case ErrorCode::SingularDesign: return "singular_design";
  case ErrorCode::LogDomain: return "log_domain";
  case ErrorCode::Shape: return "shape";
  case ErrorCode::Patching: return "patching";
  case ErrorCode::State: return "state";
  case ErrorCode::Io: return "io";
  case ErrorCode::Format: return "format";
  case ErrorCode::Numeric: return "numeric";
  case ErrorCode::MissingCheckpoint: return "missing_checkpoint";
  case ErrorCode::Internal: return "internal";
  }
  return "unknown";
}

} // namespace dtf
