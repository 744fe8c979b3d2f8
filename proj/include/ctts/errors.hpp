// Copyright 2026 The ctts Authors
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

namespace ctts {

// Error taxonomy shared by all modules. The CLI maps these to exit codes:
// validation/shape/format -> 2, missing prerequisite -> 3, numerical -> 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg)
      : Error("validation error: " + msg) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg)
      : Error("format error: " + msg) {}
};

// A dataset-level problem: missing feature file, utterance without target...
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& msg) : Error("index error: " + msg) {}
};

// Sequence longer than a fixed table (e.g. the positional-encoding table).
class CapacityError : public Error {
 public:
  explicit CapacityError(const std::string& msg)
      : Error("capacity error: " + msg) {}
};

class EmptyInputError : public Error {
 public:
  explicit EmptyInputError(const std::string& msg)
      : Error("empty input: " + msg) {}
};

// Zero total length out of the length regulator and similar collapses.
class DegenerateOutputError : public Error {
 public:
  explicit DegenerateOutputError(const std::string& msg)
      : Error("degenerate output: " + msg) {}
};

class MissingPrerequisiteError : public Error {
 public:
  explicit MissingPrerequisiteError(const std::string& msg)
      : Error("missing prerequisite: " + msg) {}
};

// NaN/Inf during training; the trainer aborts and dumps the batch.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& msg)
      : Error("numerical failure: " + msg) {}
};

}  // namespace ctts
