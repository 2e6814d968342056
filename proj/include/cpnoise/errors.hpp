#pragma once

#include <stdexcept>
#include <string>

namespace cpnoise {

// Bad experiment configuration (unknown keys, unsupported combinations).
// Mapped to CLI exit code 2.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A requested guarantee cannot be met (e.g. adjusted alpha >= 1, or no
// grid point satisfies the risk inequality). Mapped to CLI exit code 3.
class infeasibility_error : public std::runtime_error {
 public:
  explicit infeasibility_error(const std::string& msg)
      : std::runtime_error(msg) {}
};

}  // namespace cpnoise
