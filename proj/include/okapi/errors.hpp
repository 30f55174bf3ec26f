#pragma once

#include <stdexcept>
#include <string>

namespace okapi {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Bad input data or arguments. Everything below maps to exit code 2 in the CLI.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class FormatError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class ValidationError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class DimensionMismatch : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class ArityMismatch : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class LengthMismatch : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class DegenerateVector : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class EmptyInput : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class SingleDomain : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class TooFewScores : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class ZeroVariance : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class BatchLargerThanBank : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

// A computation finished but produced nothing usable (exit code 3).
class EmptyResult : public Error {
 public:
  using Error::Error;
};

class NoMatches : public EmptyResult {
 public:
  using EmptyResult::EmptyResult;
};

class EmptyGridAfterFilter : public EmptyResult {
 public:
  using EmptyResult::EmptyResult;
};

}  // namespace okapi
