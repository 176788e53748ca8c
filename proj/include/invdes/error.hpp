#pragma once

#include <stdexcept>
#include <string>

namespace invdes {

// Base type for every error the engine raises on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Structural problems: mismatched vector lengths, malformed containers.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Value-level violations of an operation's preconditions.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented contract (e.g. shrinking a dataset).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A spec or configuration failed validation; message lists the violations.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A backing resource is too small for the request.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Not enough data to perform a statistical operation.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// A numeric computation outside training went non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Reading a persisted artifact failed (corrupt, truncated, wrong version).
class LoadError : public Error {
 public:
  using Error::Error;
};

// Filesystem writes failed.
class IoError : public Error {
 public:
  using Error::Error;
};

// The LLM reply never validated against the requested schema.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, std::string last_reply)
      : Error(what), last_reply_(std::move(last_reply)) {}
  const std::string& last_reply() const { return last_reply_; }

 private:
  std::string last_reply_;
};

// The LLM endpoint could not be reached after retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Required user inputs are absent or unusable; message lists them.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

// Bad engine or client configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// The deterministic architecture ladder has no untried entry left.
class ExplorationExhaustedError : public Error {
 public:
  using Error::Error;
};

// Every inverse-design candidate was dropped for non-finite gradients.
class OptimizationCollapseError : public Error {
 public:
  using Error::Error;
};

// Exporting a bundle that was never trained.
class NotTrainedError : public Error {
 public:
  using Error::Error;
};

}  // namespace invdes
