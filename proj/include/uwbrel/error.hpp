#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace uwbrel {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside its declared domain (e.g. pitch beyond +-90 deg).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Too few elements, or an index outside its container.
class ArityError : public Error {
 public:
  using Error::Error;
};

/// Geometry or design matrix without the rank the computation needs.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

/// A requested measurement or record does not exist.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise malformed numeric input.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Not enough distinct antenna pairs to observe the relative pose.
class ObservabilityError : public Error {
 public:
  using Error::Error;
};

class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Timestamps went backwards.
class OrderingError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or scenario.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Input file does not match the expected schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Wire decoding failure; offset is the byte position where decoding stopped.
class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace uwbrel
