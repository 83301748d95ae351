#pragma once

#include <stdexcept>
#include <string>

namespace sicr {

// Invalid user/config input. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not line up.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class BatchSizeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Misuse of an API contract (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Train/val/test planning failures. Exit code 3.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf during optimization. Exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sicr
