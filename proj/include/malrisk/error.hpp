#pragma once

#include <stdexcept>
#include <string>

namespace malrisk {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Input data or configuration that fails validation.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Factorization failure, non-finite intermediate, infeasible recursion.
class NumericError : public Error {
public:
    using Error::Error;
};

/// y == mu exactly, where the MAL density has an integrable singularity.
class DegeneratePointError : public NumericError {
public:
    using NumericError::NumericError;
};

namespace detail {
inline void require(bool ok, const std::string& what) {
    if (!ok) throw DomainError(what);
}
}  // namespace detail

}  // namespace malrisk
