#ifndef REFSR_ERROR_HPP_
#define REFSR_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace refsr {

// Base of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or mislabelled files.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Degenerate geometry, no consensus model, or an unusable reference.
class EstimationError : public Error {
 public:
  using Error::Error;
};

}  // namespace refsr

#endif  // REFSR_ERROR_HPP_
