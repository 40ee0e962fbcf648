#pragma once

#include <stdexcept>
#include <string>

namespace sne {

// Base of everything the library throws. The CLI maps the subclasses onto
// exit codes (usage 1, data 2, numerical 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class DegeneratePatch : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace sne
