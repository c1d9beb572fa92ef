#pragma once

#include <stdexcept>
#include <string>

namespace spst {

// Base for everything thrown on purpose. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad shapes, mismatched axes, invalid op arguments.
class DimError : public Error {
 public:
  explicit DimError(const std::string& msg) : Error(msg) {}
};

// Malformed config files, unsatisfiable model settings.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Unreadable / corrupt input data (wav, bitstream, checkpoint).
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf escapes, divergence, numeric preconditions.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

#define SPST_CHECK(cond, msg)                                         \
  do {                                                                \
    if (!(cond)) throw ::spst::DimError(std::string("check failed: ") + msg); \
  } while (0)

}  // namespace spst
