/* Copyright 2026 The CQIL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef CQIL_ERRORS_HPP_
#define CQIL_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace cqil {

// Root of every error raised by the engine. Callers that only need to report
// a failure can catch this; the subclasses exist so the CLI can map failures
// onto exit codes and tests can assert on the failure kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/kernel shape disagreement.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid model configuration or model/plan mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid (L, p, s, e, d) partition parameters.
class PlanError : public Error {
 public:
  using Error::Error;
};

// Malformed weight container, config file, or corpus.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A failure inside the concurrent executor. Always names the group and the
// layer whose task failed.
class ExecutionError : public Error {
 public:
  ExecutionError(int group, int layer, const std::string& what)
      : Error("group " + std::to_string(group) + " layer " +
              std::to_string(layer) + ": " + what),
        group_(group),
        layer_(layer) {}

  int group() const { return group_; }
  int layer() const { return layer_; }

 private:
  int group_;
  int layer_;
};

}  // namespace cqil

#endif  // CQIL_ERRORS_HPP_
