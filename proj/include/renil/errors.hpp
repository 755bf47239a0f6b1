#pragma once

#include <stdexcept>
#include <string>

namespace renil {

// Malformed input files or configuration.
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite activations, losses or parameters.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing or unwritable files.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace renil
