#pragma once

#include <stdexcept>
#include <string>

namespace dptrav {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

/// Iterate or state became NaN/inf during optimization or sampling.
class NonFinite : public Error {
 public:
  using Error::Error;
};

class NotLogConcave : public Error {
 public:
  using Error::Error;
};

class Unsupported : public Error {
 public:
  using Error::Error;
};

/// Posterior mass escaped the quadrature grid.
class GridLeak : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidParameter(what);
}

}  // namespace detail
}  // namespace dptrav
