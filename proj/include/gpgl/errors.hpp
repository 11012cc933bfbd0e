#pragma once

#include <stdexcept>
#include <string>

namespace gpgl {

// Base type for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched tensor/matrix shapes or bad indices.
struct ShapeError : Error {
    using Error::Error;
};

// A math op evaluated outside its domain (log of a non-positive value, ...).
struct DomainError : Error {
    using Error::Error;
};

// Invalid configuration, flags, or dataset contents.
struct ConfigError : Error {
    using Error::Error;
};

// Numeric breakdown at runtime (factorization failure, non-finite loss).
struct NumericError : Error {
    using Error::Error;
};

}  // namespace gpgl
