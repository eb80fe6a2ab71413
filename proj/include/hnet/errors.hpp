#pragma once

#include <stdexcept>
#include <string>

namespace hnet {

/// Tensor or layer shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value (model, synth, training).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// NaN or Inf detected where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem or format failure while reading/writing artifacts.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint does not match the model it is loaded into.
class CheckpointMismatch : public std::runtime_error {
 public:
  CheckpointMismatch(const std::string& param, const std::string& what)
      : std::runtime_error(what), param_(param) {}
  const std::string& param() const noexcept { return param_; }

 private:
  std::string param_;
};

}  // namespace hnet
