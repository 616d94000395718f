#pragma once

#include <stdexcept>
#include <string>

namespace casa {

/// Malformed input file (bad line, unreadable JSON).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Structurally valid input that violates the dialogue schema.
class SchemaError : public DataError {
public:
  using DataError::DataError;
};

/// Invalid run configuration.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Training or evaluation failed at runtime (e.g. non-finite loss).
class RuntimeFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace casa
