#pragma once

#include <stdexcept>
#include <string>

namespace samtta {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes, image sizes or config dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Value outside an operation's domain (log of nonpositive, t outside [0,1], ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff tape or optimizer state.
class GraphError : public Error {
 public:
  using Error::Error;
};

// Malformed file: bad magic, truncated payload, wrong header fields.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace samtta
