#pragma once

#include <stdexcept>
#include <string>

namespace stitcher {

enum class ErrorCode {
    MalformedInput,
    MissingFile,
    DimMismatch,
    EmptyClip,
    ZeroVector,
    EmptyInstance,
    NoCandidates,
    CannotViolate,
    LlmFormatError,
    LlmUnavailable,
    InsufficientDistractors,
    NumericFailure,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace stitcher
