#pragma once

#include <stdexcept>
#include <string>

namespace fedsem {

// Raised when an experiment configuration fails validation before any work
// has started. The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a required on-disk input (dataset, snapshot, run directory)
// does not exist. The CLI maps this to exit code 3.
struct MissingInputError : std::runtime_error {
  explicit MissingInputError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fedsem
