#pragma once

#include <stdexcept>
#include <string>

namespace weaklab {

// Raised for malformed configs, bad CLI values and fail-fast precondition
// checks on user input. The CLI maps it to exit code 2; everything else
// (IO failures, numeric blow-ups) maps to exit code 3.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace weaklab
