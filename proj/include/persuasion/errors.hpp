#pragma once

#include <stdexcept>
#include <string>

namespace persuasion {

// Bad user input: malformed prior, wrong dimensions, non-PD covariance.
class ConfigurationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericDomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Iterative method gave up. Carries the last residual.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class DegenerateCellError : public std::runtime_error {
public:
    DegenerateCellError(const std::string& what, double condition)
        : std::runtime_error(what), condition_(condition) {}
    double condition() const noexcept { return condition_; }

private:
    double condition_;
};

class PreconditionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace persuasion
