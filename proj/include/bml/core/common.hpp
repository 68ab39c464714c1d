#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bml {

/// Error raised for violated preconditions, malformed inputs and I/O failures.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}

template <typename A, typename... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
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
void check(bool cond, const Args&... args) {
  if (!cond) fail(args...);
}

template <typename T>
bool is_finite(T x) {
  return std::isfinite(static_cast<double>(x));
}

}  // namespace bml
