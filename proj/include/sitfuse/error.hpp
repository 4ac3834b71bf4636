#pragma once

#include <stdexcept>
#include <string>

namespace sitfuse {

/// Invalid parameters, preconditions or configuration. The CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Failures that depend on data or runtime state (missing files, unreachable
/// goals, divergence). The CLI maps it to exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sitfuse
