#pragma once

#include <stdexcept>
#include <string>

namespace clp {

// Base for all toolkit failures. Each subclass carries the process exit code
// the CLI maps it to, so library code can stay exception-based while the
// binary reports a stable, scriptable status.
class Error : public std::runtime_error {
public:
    Error(const std::string& msg, int exit_code)
        : std::runtime_error(msg), exit_code_(exit_code) {}

    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

// Invalid or inconsistent configuration (bad dims, rates outside (0,1), ...).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg, 2) {}
};

// Missing or malformed inputs: absent files, corrupt checkpoints, empty data.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg, 3) {}
};

// Numerical failure: NaN/Inf loss or gradients, zero-variance activations.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg, 4) {}
};

// Artifact produced under a different configuration than the one in use.
class LineageError : public Error {
public:
    explicit LineageError(const std::string& msg) : Error(msg, 5) {}
};

// API misuse or violated internal invariant (shape mismatch, reused tape...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg, 1) {}
};

}  // namespace clp
