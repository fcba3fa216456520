#pragma once

#include <stdexcept>
#include <string>

namespace semfuse {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

/// Every pixel of a cross-entropy evaluation was excluded by the class mask.
class MaskError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
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

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

/// Training phases were requested in an order the strategy does not allow.
class PhaseError : public Error {
 public:
  using Error::Error;
};

}  // namespace semfuse
