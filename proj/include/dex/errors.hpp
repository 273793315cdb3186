#pragma once

#include <stdexcept>
#include <string>

namespace dex {

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Caller broke a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid hyperparameter combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed user input (token ids, files, references).
class InputError : public Error {
public:
    using Error::Error;
};

/// No monotonic surjective path exists (more tokens than frames).
class InfeasibleAlignment : public InputError {
public:
    using InputError::InputError;
};

/// NaN/Inf produced, or training diverged.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A fixed-size learned embedding was asked for a longer extent than it holds.
class ExtentError : public Error {
public:
    using Error::Error;
};

/// Mode/argument combination that the command surface rejects.
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace dex
