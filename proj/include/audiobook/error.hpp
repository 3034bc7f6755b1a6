// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace audiobook {

/// Base of every error the library throws. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A domain invariant does not hold (exit code 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text or record; carries the 1-based line (0 when unknown).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Bad command-line or configuration usage (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace audiobook
