#pragma once

#include <stdexcept>
#include <string>

namespace aspmtl {

// Error taxonomy. The CLI maps each kind onto a fixed exit code:
// IoError 2, ConfigError 3, CompatibilityError 4, DivergenceError 5.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// A caller broke an API precondition (e.g. backward() from a non-scalar).
struct ContractError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Bad user data: malformed corpus line, unknown task, empty sequence.
struct InputError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct CompatibilityError : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace aspmtl
