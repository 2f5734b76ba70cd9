#pragma once

#include <stdexcept>
#include <string>

namespace rat {

// Exit codes used by the CLI. Library code throws; the CLI maps to codes.
enum class ExitCode : int {
  ok = 0,
  config = 1,
  data = 2,
  numeric = 3,
  resource = 4,
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatches are configuration bugs; the message names both shapes.
struct ShapeError : ConfigError {
  explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ResourceError : std::runtime_error {
  explicit ResourceError(const std::string& msg) : std::runtime_error(msg) {}
};

inline ExitCode exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return ExitCode::config;
  if (dynamic_cast<const DataError*>(&e)) return ExitCode::data;
  if (dynamic_cast<const NumericError*>(&e)) return ExitCode::numeric;
  if (dynamic_cast<const ResourceError*>(&e)) return ExitCode::resource;
  return ExitCode::config;
}

}  // namespace rat
