#pragma once

#include <stdexcept>
#include <string>

namespace s2s {

// Broken precondition: bad shapes, out-of-range probabilities, and so on.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN/Inf showed up where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedFormat : public IoError {
 public:
  using IoError::IoError;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace detail
}  // namespace s2s
