#pragma once

#include <stdexcept>
#include <string>

namespace volformer {

// Error taxonomy shared by all modules. The CLI maps kinds onto exit codes:
// usage/config -> 1, data-shaped problems -> 2, numeric failures -> 3.
enum class ErrorKind {
    shape,
    value,
    format,
    truncated,
    overlap,
    dtype,
    consistency,
    duplicate_name,
    missing_tensor,
    config,
    data,
    io,
    numeric,
    usage,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

} // namespace volformer
