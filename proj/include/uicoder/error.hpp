#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uicoder {

enum class ErrorCode {
    precondition,
    invalid_argument,
    unknown_id,
    unknown_version,
    missing_slot,
    image_arity_mismatch,
    malformed_tags,
    no_boxed_content,
    unbalanced_braces,
    parse_error,
    auth_failure,
    rate_limited,
    timeout,
    transport,
    malformed_provider_response,
    extraction_failed,
    corrupt_log,
    io_error,
    pool_exhausted,
    protocol_error,
    config_error,
    conflict,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace uicoder
