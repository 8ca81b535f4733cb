#pragma once

#include <stdexcept>
#include <string>

namespace polneuron {

// Error categories double as the C API status codes and the CLI exit codes
// (config = 2, dependency = 3, numeric = 4).
enum class ErrorKind {
  InvalidArgument = 1,
  Config = 2,
  Dependency = 3,
  Numeric = 4,
  Schema = 5,
  Io = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace polneuron
