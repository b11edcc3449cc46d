#pragma once

#include <stdexcept>
#include <string>

namespace zresid {

// Bad input: malformed files, schema problems, violated preconditions.
class validation_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure that is not a user error (singular Hessian, non-finite values).
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace zresid
