#pragma once

#include <stdexcept>

namespace certainnet {

// Malformed or inconsistent input artifact (bad schema version, truncated
// record, id mismatch). The CLI maps this to exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad invocation: missing flag, unreadable required file. Exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss. Exit code 4.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace certainnet
