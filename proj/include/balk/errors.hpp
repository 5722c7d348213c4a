#pragma once

#include <stdexcept>
#include <string>

namespace balk {

/// Model or estimator parameters outside their domain.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Simulation could not reach a stationary regime (queue blows up).
class InstabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Queue trace is inconsistent (negative queue length, unsorted epochs, ...).
class TraceIntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every likelihood term was dropped by the zero-joining-probability indicator.
class DegenerateLikelihoodError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Estimator failed to produce an admissible estimate.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Series or integral representation failed to converge.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Too many replications of an experiment failed.
class ExperimentFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or configuration; carries an optional line number.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what, long line = -1)
        : std::runtime_error(line >= 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}

    long line() const noexcept { return line_; }

private:
    long line_;
};

}  // namespace balk
