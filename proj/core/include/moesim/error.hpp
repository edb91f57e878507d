// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace moesim {

// Base of every error raised by the library. The CLI maps subclasses to exit
// codes, so new error types should derive from the closest existing one.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid shapes, sizes, or parameter combinations supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input text. `line()` is 1-based; 0 when no line applies.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that violates a data invariant (e.g. expert index >= E).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// A token was mapped to a slot that is not resident.
class PlacementError : public Error {
 public:
  using Error::Error;
};

// Fewer slots than distinct demanded experts.
class InfeasibleCapacityError : public Error {
 public:
  InfeasibleCapacityError(const std::string& what, std::optional<int> layer);
  std::optional<int> layer() const noexcept { return layer_; }

 private:
  std::optional<int> layer_;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch);
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// A metric that is undefined for its inputs (zero makespan).
class MetricError : public Error {
 public:
  using Error::Error;
};

class AggregationError : public Error {
 public:
  using Error::Error;
};

}  // namespace moesim
