#pragma once

#include <stdexcept>
#include <string>

namespace aqcl {

enum class ErrorCode {
  InvalidArgument = 1,
  Config,
  Io,
  Parse,
  Shape,
  Index,
  Diverged,
  Undefined,
  Internal,
};

// Every recoverable failure in the library is reported through this type.
// The C API maps `code()` one-to-one onto aqcl_status values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace aqcl
