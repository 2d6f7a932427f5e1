#pragma once

#include <stdexcept>
#include <string>

namespace symnet {

enum class ErrorCode {
  kInvalidArgument = 1,
  kNotFound,
  kIo,
  kFormat,
  kVersion,
  kNumeric,
  kEmptyForeground,
  kInvalidConfig,
  kState,
};

// Every failure raised by the library carries one of the codes above so the
// C boundary can translate it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define SYMNET_DEFINE_ERROR(Name, Code)                                   \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
  };

SYMNET_DEFINE_ERROR(InvalidArgument, kInvalidArgument)
SYMNET_DEFINE_ERROR(NotFound, kNotFound)
SYMNET_DEFINE_ERROR(IoError, kIo)
SYMNET_DEFINE_ERROR(FormatError, kFormat)
SYMNET_DEFINE_ERROR(VersionError, kVersion)
SYMNET_DEFINE_ERROR(NumericError, kNumeric)
SYMNET_DEFINE_ERROR(EmptyForeground, kEmptyForeground)
SYMNET_DEFINE_ERROR(InvalidConfig, kInvalidConfig)
SYMNET_DEFINE_ERROR(StateError, kState)

#undef SYMNET_DEFINE_ERROR

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace symnet
