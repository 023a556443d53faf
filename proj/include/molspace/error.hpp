// Copyright 2026 The molspace Authors
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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace molspace {

/// Coarse error categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  kShape = 2,
  kNumeric = 3,
  kParse = 4,
  kFormat = 5,
  kInvariant = 6,
  kIo = 7,
  kArgument = 8,
};

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kInvariant: return "invariant";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kArgument: return "argument";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error(ErrorKind::kArgument, what) {}
};

/// A violated domain invariant. `invariant()` names the module rule that failed.
class InvariantError : public Error {
 public:
  InvariantError(std::string invariant, const std::string& what)
      : Error(ErrorKind::kInvariant, invariant + ": " + what),
        invariant_(std::move(invariant)) {}
  const std::string& invariant() const noexcept { return invariant_; }

 private:
  std::string invariant_;
};

/// SMILES and token-level errors carry the byte offset of the offending input.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error(ErrorKind::kParse, what + " at offset " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// File-format errors. `line` is 1-based for text formats and 0 for binary ones.
class FormatError : public Error {
 public:
  FormatError(std::string path, std::size_t line, const std::string& what)
      : Error(ErrorKind::kFormat,
              path + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        path_(std::move(path)),
        line_(line) {}
  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string path_;
  std::size_t line_;
};

}  // namespace molspace
