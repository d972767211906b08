#pragma once

#include <stdexcept>
#include <string>

namespace drtext {

// Error taxonomy used across the toolkit. Everything derives from Error so
// callers can catch one type at the CLI boundary.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes disagree (names both shapes in the message).
struct DimensionError : Error {
    using Error::Error;
};

// An operation precondition was violated (empty input, non-scalar loss, ...).
struct ContractError : Error {
    using Error::Error;
};

// Invalid configuration value (iterations < 1, batch size < 1, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed input file; message carries the line number where known.
struct ParseError : Error {
    using Error::Error;
};

// Token/row lookup outside the valid range.
struct LookupError : Error {
    using Error::Error;
};

}  // namespace drtext
