#pragma once

#include <stdexcept>
#include <string>

namespace cbmaudit {

/// Broad failure classes. The CLI maps these onto exit codes.
enum class ErrorKind {
    invalid_argument,
    shape_mismatch,
    config,
    io,
    corrupt,
    divergence,
    not_defined,
};

inline const char* to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::corrupt: return "corrupt";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::not_defined: return "not_defined";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what)
        , kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what)
{
    if (!condition) fail(kind, what);
}

} // namespace cbmaudit
