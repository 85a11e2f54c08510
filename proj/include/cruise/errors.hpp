#pragma once

#include <stdexcept>
#include <string>

namespace cruise {

/// Base for every error raised by the library.
class CruiseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pitch too close to ±90° for the Z-Y-X Euler-rate map.
class SingularAttitude : public CruiseError {
 public:
  using CruiseError::CruiseError;
};

class NonFiniteState : public CruiseError {
 public:
  using CruiseError::CruiseError;
};

class InvalidTrackSpec : public CruiseError {
 public:
  using CruiseError::CruiseError;
};

class ShapeMismatch : public CruiseError {
 public:
  using CruiseError::CruiseError;
};

class LengthMismatch : public CruiseError {
 public:
  using CruiseError::CruiseError;
};

class NonFiniteLoss : public CruiseError {
 public:
  using CruiseError::CruiseError;
};

class EmptyResults : public CruiseError {
 public:
  using CruiseError::CruiseError;
};

/// Configuration problem; `field` names the offending key path when known.
class ConfigError : public CruiseError {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : CruiseError(field.empty() ? what : field + ": " + what), field_(field) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class CheckpointError : public CruiseError {
 public:
  using CruiseError::CruiseError;
};

}  // namespace cruise
