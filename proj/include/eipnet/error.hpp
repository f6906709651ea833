#pragma once

#include <stdexcept>
#include <string>

namespace eipnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class UnsupportedConfig : public Error {
 public:
  using Error::Error;
};

/// A forward op produced NaN or Inf from finite inputs.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

}  // namespace eipnet
