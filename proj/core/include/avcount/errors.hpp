#pragma once

#include <stdexcept>
#include <string>

namespace avcount {

/// Bad call: mismatched lengths, wrong shapes, out-of-range indices.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Value outside the mathematical domain of an operation (non-positive label, NaN feature, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed input file. `line()` is 1-based, 0 when not applicable.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A required artifact (weights, sidecar, table) is missing.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Media could not be read or decoded.
class MediaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace avcount
