#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace delta {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is out of range. `field()` names the offending setting.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// The data source cannot satisfy a request (e.g. too few samples of a class).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `offset()` is the byte (or line) where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::size_t offset)
      : Error(message + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A label is outside the set of classes a loss or evaluator may score.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Stream data was requested a second time.
class SinglePassError : public Error {
 public:
  using Error::Error;
};

/// Too few samples to define the loss.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace delta
