#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cfqi {

/// Invalid configuration value. `field()` is the dotted path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Malformed input file; carries the 1-based line number of the offending record.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// An artifact or dataset was produced under a different environment configuration.
class CompatibilityError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Internal invariant violated (e.g. a censoring run longer than n_hat).
class ConsistencyError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The offline data does not cover some censoring depth the learner needs.
class CoverageError : public std::runtime_error {
 public:
  CoverageError(int depth, const std::string& what)
      : std::runtime_error(what), depth_(depth) {}
  int depth() const noexcept { return depth_; }

 private:
  int depth_;
};

/// Survival function too small (or risk set empty) at the censoring point.
class DegenerateTailError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The DP sup-norm delta kept growing; the backup is not contracting.
class NonContractionError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cfqi
