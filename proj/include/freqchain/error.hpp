#pragma once

#include <stdexcept>
#include <string>

namespace freqchain {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Arithmetic left the representable range of 128-bit ticks.
class OverflowError : public Error {
 public:
  using Error::Error;
};

// An operation would have had to round; exact results only.
class ExactnessError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. line/column are 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0, int column = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ", column " +
                             std::to_string(column) + ": " + what
                       : what),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

// Invalid parameters or scenario content.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data cannot support the requested reduction.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace freqchain
