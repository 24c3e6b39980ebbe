#pragma once

#include <stdexcept>
#include <string>

namespace rslab {

/// Process exit codes shared by the CLI and the library error types.
enum class ExitCode : int {
  ok = 0,
  failure = 1,
  config = 2,
  io = 3,
  insufficient_data = 4,
  numeric = 5,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg, ExitCode code = ExitCode::failure)
      : std::runtime_error(msg), code_(code) {}
  ExitCode exit_code() const { return code_; }

 private:
  ExitCode code_;
};

/// Shape or rank mismatch between operands.
struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error(m, ExitCode::failure) {}
};

/// An API precondition was violated (e.g. backward on a non-scalar).
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error(m, ExitCode::failure) {}
};

/// Invalid configuration value or flag combination.
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(m, ExitCode::config) {}
};

/// Invalid user-supplied data (unknown glyph, token outside the vocab, ...).
struct InputError : Error {
  explicit InputError(const std::string& m) : Error(m, ExitCode::config) {}
};

struct IOError : Error {
  explicit IOError(const std::string& m) : Error(m, ExitCode::io) {}
};

/// Non-finite value detected, or an optimization step diverged.
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(m, ExitCode::numeric) {}
};

struct InsufficientDataError : Error {
  explicit InsufficientDataError(const std::string& m) : Error(m, ExitCode::insufficient_data) {}
};

/// Decoding or teacher forcing ran past the maximum step index.
struct StepOverflowError : Error {
  explicit StepOverflowError(const std::string& m) : Error(m, ExitCode::config) {}
};

}  // namespace rslab
