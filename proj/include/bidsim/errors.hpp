#pragma once

#include <stdexcept>
#include <string>

namespace bidsim {

// Density or CDF queried where the model places no mass.
struct SupportError : std::runtime_error {
  explicit SupportError(const std::string& what) : std::runtime_error(what) {}
};

// An iterative routine exhausted its iteration or bracketing budget.
struct ConvergenceError : std::runtime_error {
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

// A quantity left the range representable by double arithmetic.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Input data carries no usable signal (e.g. all samples identical).
struct DegenerateError : std::runtime_error {
  explicit DegenerateError(const std::string& what) : std::runtime_error(what) {}
};

// An experiment or model configuration violates a documented precondition.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Too few data points for the requested statistic.
struct InsufficientDataError : std::runtime_error {
  explicit InsufficientDataError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem output failed.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bidsim
