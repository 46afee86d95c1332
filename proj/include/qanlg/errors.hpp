#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qanlg {

// Shape or dimension mismatch between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A documented precondition of an operation was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Base for everything caused by bad input data (files, strings).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t position)
      : DataError(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class SchemaError : public DataError {
 public:
  SchemaError(const std::string& what, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class LoadError : public DataError {
 public:
  using DataError::DataError;
};

class UnresolvedPlaceholderError : public DataError {
 public:
  explicit UnresolvedPlaceholderError(const std::string& token)
      : DataError("unresolved placeholder: " + token), token_(token) {}
  const std::string& token() const { return token_; }

 private:
  std::string token_;
};

// Bad command line or configuration.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qanlg
