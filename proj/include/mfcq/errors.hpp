#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfcq {

// Error taxonomy shared by the whole toolkit. The CLI maps each type to a
// distinct documented exit code (see tools/mfcq.cpp and README).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Mismatched vector/matrix dimensions between two values.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid user-supplied configuration (bad step, bad schema, empty net, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Invalid argument to an operation (e.g. k larger than the net).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// A build would exceed a configured memory/size cap.
class ResourceError : public Error {
public:
    using Error::Error;
};

// A callee violated a stated contract (invalid distribution from a model,
// policy mass on a masked action, Q table not covering the net, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// Exploration hit the step cap before visiting every net neighborhood.
class CoverageError : public Error {
public:
    CoverageError(const std::string& msg, std::vector<std::size_t> unvisited)
        : Error(msg), unvisited_(std::move(unvisited)) {}

    const std::vector<std::size_t>& unvisited() const { return unvisited_; }

private:
    std::vector<std::size_t> unvisited_;
};

// Fixed-point iteration failed to reach tolerance within the sweep cap.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& msg, std::vector<double> delta_trace)
        : Error(msg), delta_trace_(std::move(delta_trace)) {}

    const std::vector<double>& delta_trace() const { return delta_trace_; }

private:
    std::vector<double> delta_trace_;
};

}  // namespace mfcq
