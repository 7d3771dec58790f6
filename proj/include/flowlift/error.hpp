#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace flowlift {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raster dimensions do not match what an operation requires.
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid configuration value (ratio out of range, weights not summing to 1, ...).
struct ConfigError : Error {
    using Error::Error;
};

/// Geometric precondition violated (point behind camera, nonpositive depth).
struct GeometryError : Error {
    using Error::Error;
};

/// NaN/inf appeared in an energy term; message names the term.
struct NumericalError : Error {
    using Error::Error;
};

/// Optimizer could not make progress (step underflow with no accepted decrease).
struct ConvergenceError : Error {
    explicit ConvergenceError(const std::string& msg, std::vector<double> trace = {})
        : Error(msg), energy_trace(std::move(trace)) {}
    std::vector<double> energy_trace;
};

/// File missing, unreadable, or malformed.
struct IoError : Error {
    using Error::Error;
};

}  // namespace flowlift
