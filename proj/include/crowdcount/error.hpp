#pragma once

#include <stdexcept>
#include <string>

namespace crowdcount {

// Every failure surfaced by the library carries one of these codes. The C API
// maps them one-to-one onto cc_status values.
enum class ErrorCode {
  Argument = 1,
  Io,
  Load,
  Validation,
  Generation,
  Sampling,
  Inference,
  Training,
  Config,
  Internal,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace crowdcount
