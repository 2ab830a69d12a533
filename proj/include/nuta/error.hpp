#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace nuta {

// Shape/dimension contract violations (mismatched extents, bad axis orders).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad values: non-finite data, out-of-range labels, invalid ratios.
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config-file problems: unknown keys, unparsable values, failed validation.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// I/O problems, surfaced with the offending path.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void cat_into(std::ostringstream&) {}
template <class T, class... Rest>
void cat_into(std::ostringstream& os, T&& v, Rest&&... rest) {
  os << v;
  cat_into(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <class... Parts>
std::string cat(Parts&&... parts) {
  std::ostringstream os;
  detail::cat_into(os, std::forward<Parts>(parts)...);
  return os.str();
}

template <class Err = ShapeError, class... Parts>
void require(bool cond, Parts&&... parts) {
  if (!cond) throw Err(cat(std::forward<Parts>(parts)...));
}

}  // namespace nuta
