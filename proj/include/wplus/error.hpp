#pragma once

#include <stdexcept>
#include <string>

namespace wplus {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed a value that violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bytes do not follow the expected layout (magic, version, fields).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Layout is fine but a checksum disagrees with the content.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// External model asset missing or inconsistent with its manifest.
class AssetError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Carrier too small for a payload.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked on an object in the wrong role (e.g. stage mismatch).
class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace wplus
