#pragma once

#include <stdexcept>
#include <string>

namespace iccl {

/// Bad argument to a public operation (out-of-range index, shape mismatch).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent experiment or schedule configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Normalized performance is undefined when the reference equals uniform.
class DegenerateReference : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class InsufficientSamples : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class UndefinedCorrelation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Missing or malformed columns in a results file.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Network failure after the retry budget is spent.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Completion text that does not contain a valid state token.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::string raw)
      : std::runtime_error(what), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

/// Logprob response with no token that maps to a valid state.
class CoverageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace iccl
