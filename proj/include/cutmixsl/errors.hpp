#pragma once

#include <stdexcept>
#include <string>

namespace cutmixsl {

// Invalid caller-supplied scalar or enum argument.
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Tensor shapes of the inputs disagree.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A structural precondition failed (partition, one-hot, normalization).
struct InvariantError : std::logic_error {
  using std::logic_error::logic_error;
};

// Round or message bookkeeping misuse (stale cache, bad schedule).
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite or overflowing computation, with diagnostics in the message.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Request is well-formed but not supported for this mechanism/configuration.
struct UnsupportedError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Experiment config schema violation; `field` is the offending JSON path.
struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(std::string field_path, const std::string& what)
      : std::runtime_error(field_path + ": " + what), field(std::move(field_path)) {}
};

}  // namespace cutmixsl
