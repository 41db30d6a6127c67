#pragma once

#include <stdexcept>
#include <string>

namespace mlmgen {

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf appeared in a forward or backward pass.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse, e.g. calling backward twice on the same loss.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input longer than the configured hard cap.
class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// A decoding constraint left no admissible token.
class ConstraintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration; `key()` names the offending entry.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Malformed or truncated file (checkpoint, vocabulary, task file).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mlmgen
