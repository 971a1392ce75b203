#pragma once

#include <stdexcept>
#include <string>

namespace cblb {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or parameter (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or unusable input data (CLI exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

/// A fit or resampling step could not produce an estimate (CLI exit code 4).
class EstimationError : public Error {
public:
    using Error::Error;
};

/// Logistic coefficients diverged: the arms are (quasi-)separable by the covariates.
class SeparationError : public EstimationError {
public:
    using EstimationError::EstimationError;
};

/// A subset holds units from only one treatment arm.
class DegenerateSubset : public EstimationError {
public:
    using EstimationError::EstimationError;
};

} // namespace cblb
