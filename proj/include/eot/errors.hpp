#pragma once

#include <stdexcept>
#include <string>

namespace eot {

/// Base class for every error thrown by the library. Messages are prefixed
/// with the originating module so CLI diagnostics stay traceable.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message) : std::runtime_error(message) {}
};

}  // namespace eot
