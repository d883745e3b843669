#pragma once

#include <stdexcept>

namespace mlhoqmc {

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solver non-convergence, non-positive coefficient, or a normalization
/// constant below its floor (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mlhoqmc
