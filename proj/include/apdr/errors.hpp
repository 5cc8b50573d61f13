#pragma once

#include <stdexcept>
#include <string>

namespace apdr {

// Shapes, dimensions or settings that cannot be combined.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller-supplied data that violates an operation's precondition.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Manifest / checkpoint / image files that are missing or malformed.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values produced during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace apdr
