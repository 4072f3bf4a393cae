#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace safl {

/// Precondition on an argument does not hold (shape, range, bounds).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A file exists but its contents violate the documented layout.
class MalformedFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values surfaced by an optimizer or a loss.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}
  /// Layer index (optimizer) or iteration index (training).
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Inputs are individually valid but inconsistent with each other.
class DataIntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace safl
