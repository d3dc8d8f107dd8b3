#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vrag {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (manifest line, JSON payload, fixture file).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Duplicate identifiers.
class ConflictError : public Error {
 public:
  using Error::Error;
};

// Arguments violating an operation's preconditions.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

// Operation not allowed in the object's current state (e.g. querying an unfrozen memory).
class StateError : public Error {
 public:
  using Error::Error;
};

// Persisted index problems: bad magic, version mismatch, truncation, checksum.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Backend could not be reached or kept failing after retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Backend signalled that the request exceeded its context window. Never retried.
class ContextLengthError : public Error {
 public:
  using Error::Error;
};

}  // namespace vrag
