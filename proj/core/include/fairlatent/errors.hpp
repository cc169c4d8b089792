#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fairlatent {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or widths.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A primitive was evaluated outside its domain, or produced NaN/Inf.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an API contract (e.g. non-scalar input to grad_check).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Object used before it was ready (e.g. actnorm never initialized).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Data without enough spread to do what was asked (zero variance, singular covariance).
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

/// Fewer samples than a statistic needs.
class InsufficientBatchError : public Error {
 public:
  using Error::Error;
};

/// A fairness metric references an empty (label, group) cell or group.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text file. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace fairlatent
