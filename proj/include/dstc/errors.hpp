#pragma once

#include <stdexcept>
#include <string>

namespace dstc {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or dimension disagreement between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid user-supplied configuration (bad dims, negative counts, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required (gradients, losses).
struct NumericError : Error {
    using Error::Error;
};

// File IO failures, with a kind so callers can distinguish malformed inputs.
struct IoError : Error {
    enum class Kind {
        OpenFailed,
        WriteFailed,
        BadMagic,
        BadVersion,
        Truncated,
        HeaderMismatch,
    };

    IoError(Kind k, const std::string& msg) : Error(msg), kind(k) {}

    Kind kind;
};

} // namespace dstc
