#pragma once

#include <stdexcept>
#include <string>

namespace reveal {

// Base for every error raised by the library. The CLI maps ValidationError
// subclasses to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class PreconditionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A triplet line that lacks a subject or predicate, or has an unknown key.
class MalformedLine : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class TooManyRelations : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CorruptSample : public Error {
 public:
  using Error::Error;
};

class ClientError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

// A row with (near) zero norm reached a cosine similarity.
class DegenerateVector : public Error {
 public:
  using Error::Error;
};

}  // namespace reveal
