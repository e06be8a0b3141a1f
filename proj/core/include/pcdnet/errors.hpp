#pragma once

#include <stdexcept>
#include <string>

namespace pcdnet {

// Base type for all recoverable errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape or rank disagreement.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input outside an operation's mathematical domain (empty point set,
// point behind the camera, degenerate bounding box, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid layer, model or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API contract violation (non-scalar loss, incompatible latent codes, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// File format and serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pcdnet
