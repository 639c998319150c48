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

#pragma once

#include <stdexcept>
#include <string>

namespace dtf {

/// Error categories shared by the C++ core and the C API status codes.
enum class ErrorCode {
  InvalidArgument = 1,
  InvalidScheme,
  InsufficientMeasurements,
  SingularDesign,
  LogDomain,
  Shape,
  Patching,
  State,
  Io,
  Format,
  Numeric,
  MissingCheckpoint,
  Internal,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

/// Shape mismatch; the message always names the offending operation.
class ShapeError : public Error {
public:
  ShapeError(const std::string& op, const std::string& detail)
      : Error(ErrorCode::Shape, op + ": " + detail), op_(op) {}
  const std::string& op() const noexcept { return op_; }

private:
  std::string op_;
};

class StateError : public Error {
public:
  explicit StateError(const std::string& what) : Error(ErrorCode::State, what) {}
};

} // namespace dtf
