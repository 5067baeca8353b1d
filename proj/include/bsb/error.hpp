#pragma once

#include <stdexcept>
#include <string>

namespace bsb {

// Base of every error thrown by the library. The harness maps the derived
// categories onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied an argument or configuration that violates a contract.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent data on disk.
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// An oracle query was attempted after the query budget ran out.
class BudgetError : public Error {
 public:
  using Error::Error;
};

// Attack preconditions that the caller is expected to respect.
class PreconditionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace bsb
