#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace exsum {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (manifest, instance records, IBE records).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Rule-file syntax error; carries a 1-based source position.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line, std::size_t column)
      : Error(std::to_string(line) + ":" + std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// A rule or union that cannot be evaluated as written (unknown rule, unresolved parameter, ...).
class RuleError : public Error {
 public:
  using Error::Error;
};

/// Invalid request to a search, builder or service operation.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Another mutation is already in progress.
class BusyError : public Error {
 public:
  BusyError() : Error("busy: another mutation is in progress") {}
};

}  // namespace exsum
