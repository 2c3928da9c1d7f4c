#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace sthoi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value became NaN or infinite during a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent external input (annotation files, CLI specs, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Binary container or checkpoint that fails to parse.
class FormatError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail
}  // namespace sthoi
