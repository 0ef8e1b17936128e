#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace aub {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& value, const Rest&... rest) {
    os << value;
    format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    throw Error(os.str());
}

template <typename... Args>
void require(bool condition, const Args&... args) {
    if (!condition) fail(args...);
}

}  // namespace aub
