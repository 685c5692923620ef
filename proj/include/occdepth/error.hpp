#pragma once

#include <stdexcept>
#include <string>

namespace occdepth {

/// Base of every error thrown by the library. `exit_code()` maps the error
/// onto the CLI's process exit codes (2 usage, 3 data, 4 numeric).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual int exit_code() const noexcept { return 2; }
};

/// Caller broke a documented precondition (shape mismatch, bad parameter).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Argument outside the domain of a function (non-positive depth, bad step count).
class DomainError : public ContractError {
public:
    using ContractError::ContractError;
};

/// Argument outside an accepted closed range.
class RangeError : public ContractError {
public:
    using ContractError::ContractError;
};

/// Unreadable, corrupted or missing on-disk data.
class DataError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 3; }
};

/// Non-finite values or degenerate reductions during optimisation.
class NumericError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 4; }
};

/// A loss was asked to average over zero contributing elements.
class DegenerateBatchError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Scene parameters that cannot be realised (objects larger than the room, ...).
class GenerationError : public ContractError {
public:
    using ContractError::ContractError;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ContractError(message);
}

}  // namespace occdepth
