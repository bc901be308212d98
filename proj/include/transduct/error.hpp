// Copyright 2026 The transduct Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace transduct {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied arguments that violate a documented precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Floating point breakdown: failed factorization, non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An enumeration or iteration limit would be exceeded.
class BudgetError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. The message carries the line number when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A file was written by an incompatible format version.
class VersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// A label oracle could not answer a query.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration. `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace transduct
