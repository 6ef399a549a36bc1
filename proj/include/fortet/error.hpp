#pragma once

#include <stdexcept>
#include <string>

namespace fortet {

/// Base of every exception thrown by the library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed arguments: wrong sizes, non-finite values, bad grid specs.
class invalid_input : public error {
public:
    using error::error;
};

/// A structural hypothesis of the problem fails (zero kernel column where
/// mass must be transported, empty J-set violation, ...).
class hypothesis_failure : public error {
public:
    using error::error;
};

/// Accumulated quadrature error exceeds the documented budget.
class numerical_failure : public error {
public:
    using error::error;
};

/// File or configuration problems.
class io_error : public error {
public:
    using error::error;
};

} // namespace fortet
