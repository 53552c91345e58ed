#pragma once

#include <stdexcept>
#include <string>

namespace lacos {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration (bad hyperparameters, malformed config file). CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or unreadable input data. CLI exit code 3.
class DataError : public Error {
public:
    using Error::Error;
};

/// Numeric failure at runtime (non-finite values, domain violations). CLI exit code 4.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Degenerate statistical input (zero variance, constant vectors, all-zero masks).
class DegenerateError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Tensor shape or rank mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Corrupt or incompatible checkpoint file. CLI exit code 5.
class CheckpointError : public Error {
public:
    using Error::Error;
};

} // namespace lacos
