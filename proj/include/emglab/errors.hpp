#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace emglab {

// Error categories map to CLI exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape mismatches; almost always a wiring/configuration defect.
struct ShapeError : ConfigError {
  using ConfigError::ConfigError;
};

// File parse failures carry the byte offset where parsing stopped.
struct ParseError : DataError {
  ParseError(const std::string& msg, std::size_t offset)
      : DataError(msg + " (at byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

// Synthetic data generation could not meet its constraints.
struct GenerationError : DataError {
  using DataError::DataError;
};

}  // namespace emglab
