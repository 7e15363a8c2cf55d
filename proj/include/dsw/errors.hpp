#pragma once

#include <stdexcept>
#include <string>

namespace dsw {

// Root of every error the toolkit raises. The CLI maps each family to an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input values, shapes or configuration. Exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

class DimensionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// A caller broke an API precondition (e.g. backward on a non-scalar).
class ContractError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// An estimator cannot produce estimates for the data it was given.
class EstimationError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// An object was used in a state that no longer permits the call.
class StateError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// A metric was requested that the data cannot support (e.g. PEHE without counterfactuals).
class UnsupportedMetricError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Non-finite values, divergence. Exit code 3.
class NumericError : public Error {
public:
    using Error::Error;
};

// Filesystem and format problems. Exit code 4.
class IoError : public Error {
public:
    using Error::Error;
};

class CorruptFileError : public IoError {
public:
    using IoError::IoError;
};

class VersionMismatchError : public IoError {
public:
    using IoError::IoError;
};

// CLI exit code for an error family.
inline int exit_code_for(const Error& e) {
    if (dynamic_cast<const ValidationError*>(&e)) return 2;
    if (dynamic_cast<const IoError*>(&e)) return 4;
    return 3;
}

}  // namespace dsw
