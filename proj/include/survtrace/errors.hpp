#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace survtrace {

// Base for every error raised by the library. Callers that only want a
// message can catch this and print what().
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition (non-scalar loss, bad config, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or unusable input data. `line` is 1-based and 0 when the error
// is not tied to a particular line of an input file.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// A metric has no defined value on the given input (e.g. no comparable pairs).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace survtrace
