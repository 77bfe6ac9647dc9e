// SPDX-License-Identifier: Apache-2.0

#include "moelens/error.hpp"

namespace moelens {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidInput: return "invalid input";
        case ErrorCode::Configuration: return "configuration error";
        case ErrorCode::EmptyDomain: return "empty domain";
        case ErrorCode::Classification: return "classification error";
        case ErrorCode::Schema: return "schema error";
        case ErrorCode::Malformed: return "malformed input";
        case ErrorCode::TrainingFailure: return "training failure";
        case ErrorCode::Io: return "i/o error";
    }
    return "unknown error";
}

}  // namespace moelens
