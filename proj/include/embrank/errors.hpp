#pragma once

#include <stdexcept>
#include <string>

namespace embrank {

// Base for all library errors so callers can catch embrank failures as a family.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed a value that violates a precondition (zero rows, bad dims, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Input data is malformed (non-finite values, labels outside {0,1}, bad TSV).
class DataError : public Error {
 public:
  using Error::Error;
};

// Cross-artifact consistency violated (version mismatch, shard/plan mismatch).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Filesystem or serialized-format problem.
class IoError : public Error {
 public:
  using Error::Error;
};

// Scenario / config document is malformed.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Service cannot answer right now (no model loaded, endpoint down).
class Unavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace embrank
