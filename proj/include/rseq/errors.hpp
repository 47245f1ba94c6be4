#pragma once

#include <stdexcept>
#include <string>

namespace rseq {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor extents do not conform for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

// API misuse (backward on a non-scalar, missing gradients, ...).
class UsageError : public Error {
public:
    using Error::Error;
};

// An operation produced NaN or Inf.
class NumericFault : public Error {
public:
    explicit NumericFault(std::string op)
        : Error("numeric fault: non-finite value produced by '" + op + "'"), op_(std::move(op)) {}

    const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

// Invalid hyperparameter or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad data handed to a model or loss (token out of range, ...).
class DataError : public Error {
public:
    using Error::Error;
};

// A dataset file could not be read or decoded.
class IngestionError : public Error {
public:
    using Error::Error;
};

// Checkpoint load failures. Each failure mode has its own type.
class CheckpointError : public Error {
public:
    using Error::Error;
};

class CheckpointVersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class CheckpointShapeError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

}  // namespace rseq
