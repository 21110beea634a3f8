#pragma once

#include <stdexcept>
#include <string>

namespace duofit {

// File and image I/O failures (CLI exit code 2).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Fit aborted on non-finite loss (CLI exit code 3).
struct NumericalAbort : std::runtime_error {
    explicit NumericalAbort(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace duofit
