#pragma once

#include <stdexcept>
#include <string>

namespace rotcatt {

// Base class for every error raised by the library. The CLI maps the
// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameters, config files or command-line options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A tensor did not have the shape the plan or an operation expected.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Unreadable, corrupt or inconsistent volume / checkpoint files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rotcatt
