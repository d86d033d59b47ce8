#pragma once

#include <stdexcept>
#include <string>

namespace rdpp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure in a matrix kernel (non-convergence, lost definiteness).
class LinalgError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Malformed or mismatched input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace rdpp
