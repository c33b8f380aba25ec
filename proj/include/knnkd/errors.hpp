// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace knnkd {

/// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector or matrix shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A vector with zero norm was passed where a direction is required.
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// Class index outside [0, num_classes).
class LabelError : public Error {
 public:
  using Error::Error;
};

class BatchTooSmallError : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradientError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input carrying invalid values (NaN, duplicate ids, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace knnkd
