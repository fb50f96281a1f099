#pragma once

#include <stdexcept>
#include <string>

namespace mlcam {

// Base of every library error. Catching this is enough to turn any
// failure into a single-line diagnostic at the CLI boundary.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/extent violations. Messages name the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (flags, config files, constructor args).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite math is required (inputs, gradients).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Violated call contracts (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Problems with external data: files, manifests, masks.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace mlcam
