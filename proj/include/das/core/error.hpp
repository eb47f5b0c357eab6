#pragma once

#include <stdexcept>
#include <string>

namespace das {

// Error taxonomy. The CLI maps ConfigError to exit code 2 and NumericError to 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user configuration: invalid spec, out-of-range magnitude, unknown kind.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition (non-scalar loss, empty split).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Mismatched tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered during training or optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Singular affine map where an inverse was requested.
class InversionError : public Error {
 public:
  using Error::Error;
};

// Inputs for which a closed form has no unique answer (zero denominator).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename E>
[[noreturn]] inline void raise(const std::string& msg) {
  throw E(msg);
}

}  // namespace detail

#define DAS_CHECK(cond, ErrType, msg)                   \
  do {                                                  \
    if (!(cond)) ::das::detail::raise<ErrType>(msg);    \
  } while (0)

}  // namespace das
