#pragma once

#include <stdexcept>
#include <string>

namespace qlbgk {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad user-facing parameters (grid sizes, config fields, shapes).
class InvalidConfiguration : public Error {
public:
    using Error::Error;
};

// An operator that violates a structural invariant (non-Hermitian, negative mass...).
class InvalidState : public Error {
public:
    using Error::Error;
};

// Inputs that are well-formed but outside an operation's domain.
class InvalidInput : public Error {
public:
    using Error::Error;
};

class NumericalFailure : public Error {
public:
    using Error::Error;
};

// Iterative solve gave up; carries the last residual seen.
class NonConvergence : public NumericalFailure {
public:
    NonConvergence(const std::string& what, double residual, int iterations)
        : NumericalFailure(what + " (residual " + std::to_string(residual) + " after " +
                           std::to_string(iterations) + " iterations)"),
          residual_(residual),
          iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

}  // namespace qlbgk
