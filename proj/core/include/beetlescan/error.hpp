#pragma once

#include <stdexcept>
#include <string>

namespace beetlescan {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad magic, truncated payload, wrong column count).
class FormatError : public Error
{
  public:
    using Error::Error;
};

/// A value or configuration violates a documented invariant.
class ValidationError : public Error
{
  public:
    using Error::Error;
};

/// Tensor, matrix or vector dimensions do not agree.
class ShapeError : public Error
{
  public:
    using Error::Error;
};

/// A filesystem operation failed.
class IoError : public Error
{
  public:
    using Error::Error;
};

} // namespace beetlescan
