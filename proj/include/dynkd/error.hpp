#pragma once

#include <stdexcept>
#include <string>

namespace dynkd {

// Error kinds surfaced by the toolkit. The CLI maps ConfigError to exit code 2
// and every other kind to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  IngestionError(const std::string& what, long long byte_offset)
      : Error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  long long byte_offset() const { return offset_; }

 private:
  long long offset_;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class RefusalError : public Error {
 public:
  using Error::Error;
};

}  // namespace dynkd
