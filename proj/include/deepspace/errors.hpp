#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deepspace {

// Every error thrown by the library derives from Error so callers (CLI, service) can map it to an
// exit code or an HTTP status in one place.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* code() const noexcept = 0;
};

#define DEEPSPACE_ERROR_TYPE(Name, Code)               \
  class Name : public Error {                          \
   public:                                             \
    using Error::Error;                                \
    const char* code() const noexcept override { return Code; } \
  };

DEEPSPACE_ERROR_TYPE(ArgumentError, "argument")
DEEPSPACE_ERROR_TYPE(OutOfDomainError, "out_of_domain")
DEEPSPACE_ERROR_TYPE(StateError, "state")
DEEPSPACE_ERROR_TYPE(ConfigError, "config")
DEEPSPACE_ERROR_TYPE(DataError, "data")
DEEPSPACE_ERROR_TYPE(ParseError, "parse")
DEEPSPACE_ERROR_TYPE(NumericError, "numeric")
DEEPSPACE_ERROR_TYPE(SpecError, "unsupported")
DEEPSPACE_ERROR_TYPE(EmptyResultError, "empty_result")

#undef DEEPSPACE_ERROR_TYPE

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  const char* code() const noexcept override { return "format"; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace deepspace
