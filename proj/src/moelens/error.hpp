// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace moelens {

enum class ErrorCode {
    InvalidInput = 1,
    Configuration = 2,
    EmptyDomain = 3,
    Classification = 4,
    Schema = 5,
    Malformed = 6,
    TrainingFailure = 7,
    Io = 8,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure raised by the core carries a category so the C boundary can
/// map it onto a status code without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace moelens
