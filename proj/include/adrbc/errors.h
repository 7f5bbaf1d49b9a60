// File: errors.h
// Description: Exception hierarchy shared by every module

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adrbc {

/// Invalid configuration: shape mismatch, unknown config key, bad option value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed an argument outside the operation's domain.
class ArgumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violation of an ownership/state contract (e.g. mutating a frozen estimator).
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value encountered. `where` is a layer index, iteration or term name.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, long long where = -1)
      : std::runtime_error(what), where_(where) {}
  long long where() const { return where_; }

 private:
  long long where_;
};

/// Malformed binary or text file; `offset` is the byte offset of the failure.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace adrbc
