#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bamd {

// Base of every error the library throws. The CLI maps the concrete type to
// its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad command line or configuration (exit 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Input that cannot be parsed or fails validation (exit 3).
class DataError : public Error {
 public:
  using Error::Error;
};

// Factorization or update breakdown (exit 4).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class SingularUpdateError : public NumericalError {
 public:
  SingularUpdateError(const std::string& what, std::size_t step)
      : NumericalError(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace bamd
