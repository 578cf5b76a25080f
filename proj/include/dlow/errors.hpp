#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace dlow {

// Bad argument: wrong shape, out-of-range index, malformed request.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value violated a documented constraint (simplex, range). The message
// names the constraint.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite loss or parameter encountered during optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint/container could not be decoded.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Stream-concatenates the arguments into one message string.
template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream out;
  (out << ... << args);
  return out.str();
}

}  // namespace dlow
