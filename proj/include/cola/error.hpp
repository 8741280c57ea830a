#pragma once

#include <stdexcept>
#include <string>

namespace cola {

// Input errors are caused by user-supplied files or flags (CLI exit code 2);
// internal errors indicate a broken invariant inside the library (exit 1).
enum class ErrorKind { kInput, kInternal };

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ErrorKind kind = ErrorKind::kInput)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& what) { throw Error(what); }

[[noreturn]] inline void fail_internal(const std::string& what) {
  throw Error(what, ErrorKind::kInternal);
}

}  // namespace cola
