#pragma once

#include <stdexcept>
#include <string>

namespace reasonlens {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Missing, truncated or malformed archive / vocabulary / dataset file.
class LoadError : public Error {
 public:
  using Error::Error;
};

// A value that violates an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Requested an activation that was not captured during the forward pass.
class NotCapturedError : public Error {
 public:
  using Error::Error;
};

}  // namespace reasonlens
