#pragma once

#include <stdexcept>
#include <string>

namespace statfem {

/// Factorization failure, singular solve, eigensolver breakdown.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Degenerate element encountered during assembly.
class AssemblyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Observation point outside every element.
class LocationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Newton iteration did not reach the requested tolerance.
class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, double residual, int iterations)
        : NumericalError(what), last_residual(residual), iterations(iterations) {}
    double last_residual;
    int iterations;
};

/// A Gaussian approximation of the nonlinear prior could not be built.
class ApproximationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Malformed or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define STATFEM_REQUIRE(cond, msg)                                  \
    do {                                                            \
        if (!(cond)) throw std::invalid_argument(std::string(msg)); \
    } while (0)

} // namespace statfem
