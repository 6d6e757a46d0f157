#pragma once

#include <charconv>
#include <string>

#include "eot/tensor.hpp"

namespace eot::textfmt {

/// Shortest round-trip decimal representation via std::to_chars: locale-free,
/// so emitted text is a pure function of the value.
inline std::string format_real(real v) {
  char buf[64];
  const std::to_chars_result res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace eot::textfmt
