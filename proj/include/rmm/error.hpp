#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace rmm {

// Error categories map 1:1 onto C API status codes and the CLI's
// "ERR:<code>:" prefixes.
enum class ErrorCode { Contract, Io, Config, Numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::Contract: return "CONTRACT";
        case ErrorCode::Io: return "IO";
        case ErrorCode::Config: return "CONFIG";
        case ErrorCode::Numeric: return "NUMERIC";
    }
    return "UNKNOWN";
}

namespace detail {
inline void msg_cat(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_cat(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    msg_cat(os, rest...);
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void raise(ErrorCode code, const Args&... args) {
    std::ostringstream os;
    detail::msg_cat(os, args...);
    throw Error(code, os.str());
}

template <typename... Args>
void require(bool cond, ErrorCode code, const Args&... args) {
    if (!cond) raise(code, args...);
}

}  // namespace rmm
