#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace crossview {

// Contract violation: a caller broke a documented precondition.
class contract_error : public std::logic_error {
 public:
  explicit contract_error(const std::string& msg) : std::logic_error(msg) {}
};

// Numerical failure: NaN/Inf produced, gradcheck mismatch, etc.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// I/O failure: missing file, version mismatch, truncated payload.
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline std::string format_check(const char* file, int line, const std::string& msg) {
  std::ostringstream os;
  os << msg << " (" << file << ":" << line << ")";
  return os.str();
}
}  // namespace detail

#define CV_REQUIRE(cond, msg)                                                            \
  do {                                                                                   \
    if (!(cond))                                                                         \
      throw ::crossview::contract_error(                                                 \
          ::crossview::detail::format_check(__FILE__, __LINE__, std::string(msg)));      \
  } while (0)

}  // namespace crossview
