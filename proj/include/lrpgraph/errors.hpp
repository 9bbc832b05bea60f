#pragma once

#include <stdexcept>
#include <string>

namespace lrp {

// Root of every error thrown by the library. Callers that only need to
// report a failure can catch this; the subclasses exist so tests and the
// CLI can tell the failure modes apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Stored switch indices that point outside the target tensor.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class BuildError : public Error {
 public:
  using Error::Error;
};

class MaskError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class LayerError : public Error {
 public:
  using Error::Error;
};

class RuleError : public Error {
 public:
  using Error::Error;
};

// Raised in strict mode when a zero denominator would discard nonzero
// relevance.
class DivisionGuardError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

// Weight file errors.
class LoaderError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public LoaderError {
 public:
  using LoaderError::LoaderError;
};

class VersionMismatchError : public LoaderError {
 public:
  using LoaderError::LoaderError;
};

class TruncatedError : public LoaderError {
 public:
  using LoaderError::LoaderError;
};

class ChecksumError : public LoaderError {
 public:
  using LoaderError::LoaderError;
};

class UnsupportedDtypeError : public LoaderError {
 public:
  using LoaderError::LoaderError;
};

}  // namespace lrp
