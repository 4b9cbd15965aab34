#pragma once

#include <stdexcept>
#include <string>

namespace msan {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes do not conform (matrix/vector dimension mismatch).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An operation was called outside its contract (empty input, missing
// modality, v supplied at the wrong decoder step, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// A tensor value became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (JSONL line, config file, ...). Carries a line
// number when one is known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line = -1)
      : Error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// Structurally valid input that violates a corpus/checkpoint schema rule
// (inconsistent feature dimensions, unknown stream key, ...).
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace msan
