#pragma once

#include <stdexcept>
#include <string>

namespace ctxst {

/// Error type thrown by every ctxst component. CLI maps these to exit code 2
/// (runtime) or 1 (usage/config), see tools/.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace ctxst
