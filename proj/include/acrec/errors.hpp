#pragma once

#include <stdexcept>
#include <string>

namespace acrec {

// Invalid configuration or misuse of an API contract (exit code 1 at the CLI).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (exit code 2 at the CLI).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values produced during training or generation (exit code 3).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace acrec
