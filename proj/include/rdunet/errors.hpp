#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rdunet {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/layer shape contract violations.
struct ShapeError : Error {
  using Error::Error;
};

/// Bad argument or configuration value.
struct ValueError : Error {
  using Error::Error;
};

/// Invalid run configuration (unknown keys, out-of-range settings).
struct ConfigError : Error {
  using Error::Error;
};

/// Filesystem and file-format failures.
struct IoError : Error {
  using Error::Error;
};

/// File parse failure; `offset` is the byte position of the problem.
struct ParseError : IoError {
  ParseError(const std::string& msg, std::size_t offset)
      : IoError(msg + " (byte offset " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
};

/// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace rdunet
