#pragma once

#include <stdexcept>
#include <string>

namespace a2t {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad shapes, out-of-range parameters, malformed documents.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidTemplate : public Error {
 public:
  using Error::Error;
};

/// The toy VQA model could not parse a position out of the question.
class Unanswerable : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed image file.
class ImageError : public Error {
 public:
  using Error::Error;
};

}  // namespace a2t
