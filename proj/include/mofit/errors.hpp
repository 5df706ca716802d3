#pragma once

#include <stdexcept>
#include <string>

namespace mofit {

/// Invalid user-facing configuration (bad range, missing file, unknown mode).
/// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A loss or score became non-finite. The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
public:
  NumericalError(const std::string& what, long iteration = -1)
      : std::runtime_error(iteration >= 0 ? what + " (iteration " + std::to_string(iteration) + ")"
                                          : what),
        iteration_(iteration) {}

  long iteration() const noexcept { return iteration_; }

private:
  long iteration_;
};

/// Caller broke a documented precondition (shape mismatch, t out of range...).
class ContractViolation : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Remote oracle transport or wire-format failure.
class ProtocolError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractViolation(msg);
}
}  // namespace detail

}  // namespace mofit
