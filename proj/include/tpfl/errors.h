/*
 * Copyright 2026 The TPFL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef TPFL_ERRORS_H_
#define TPFL_ERRORS_H_

#include <stdexcept>
#include <string>
#include <vector>

namespace tpfl {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Vector / matrix / layer dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Opinion fusion or mapping hit a limit case with no finite answer.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// An input collection that must be nonempty was empty, or too small.
class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// Training produced a NaN/Inf loss.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& what, int epoch, int batch)
      : Error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

// Malformed text input. Line and column are 1-based; 0 means unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& reason, int line, int column)
      : Error(Format(reason, line, column)), line_(line), column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  static std::string Format(const std::string& reason, int line, int column) {
    std::string s = "parse error";
    if (line > 0) s += " at line " + std::to_string(line);
    if (column > 0) s += ", column " + std::to_string(column);
    return s + ": " + reason;
  }
  int line_;
  int column_;
};

// One or more configuration fields failed validation. Every problem found is
// listed, each prefixed by its dotted field path.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> problems)
      : Error(Join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string Join(const std::vector<std::string>& p) {
    std::string s = "validation failed:";
    for (const auto& item : p) s += "\n  " + item;
    return s;
  }
  std::vector<std::string> problems_;
};

}  // namespace tpfl

#endif  // TPFL_ERRORS_H_
