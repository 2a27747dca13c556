#pragma once

#include <stdexcept>
#include <string>

namespace vasparse {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model or decode configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Mismatched vector / matrix dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Sequence would exceed max_seq_len.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Sparsity budget S larger than the number of candidate tokens.
class BudgetError : public Error {
 public:
  using Error::Error;
};

/// Exhaustive search requested on an instance that is too large.
class TractabilityError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// Input is well-formed but the method is undefined on it (e.g. no image tokens).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class E>
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw E(msg);
}

}  // namespace detail

}  // namespace vasparse
