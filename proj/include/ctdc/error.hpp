#pragma once

#include <stdexcept>
#include <string>

namespace ctdc {

/// Failure categories. The command-line tool maps these onto exit codes.
enum class ErrorCode {
    invalid_argument,
    dimension_mismatch,
    pattern,      // sparsity-pattern construction or address lookup
    numeric,      // non-finite values, divergence, failed solves
    config,
    data_format,
};

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

inline void require(bool condition, ErrorCode code, const std::string& what) {
    if (!condition) fail(code, what);
}

}  // namespace ctdc
