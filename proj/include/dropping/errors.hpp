// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dropping {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

/// Operation is not valid in the object's current state (e.g. too few samples).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Linear system is rank deficient.
class RankError : public Error {
 public:
  using Error::Error;
};

}  // namespace dropping
