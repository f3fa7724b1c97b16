#pragma once

#include <stdexcept>
#include <string>

namespace mmfuse {

/// Raised when a caller breaks a precondition (bad shape, out-of-range label, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised for runtime failures: I/O, malformed files, non-finite losses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void expects(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace mmfuse
