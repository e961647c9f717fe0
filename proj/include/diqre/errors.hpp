#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace diqre {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range inputs, malformed files, length mismatches.
struct ParameterError : Error {
    using Error::Error;
};

struct InsufficientDataError : Error {
    using Error::Error;
};

// Carries the best iterate so callers can inspect a stalled solve.
struct OptimizationError : Error {
    OptimizationError(const std::string& what, std::vector<double> best_iterate, double residual)
        : Error(what), best(std::move(best_iterate)), residual(residual) {}
    std::vector<double> best;
    double residual;
};

struct InfeasiblePlanError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct SeedUnderflowError : Error {
    using Error::Error;
};

struct InvalidStateError : Error {
    using Error::Error;
};

// Floating transform residual too far from an integer.
struct PrecisionError : Error {
    using Error::Error;
};

struct AuditFailure : Error {
    using Error::Error;
};

}  // namespace diqre
