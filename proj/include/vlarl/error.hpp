#pragma once

#include <stdexcept>
#include <string>

namespace vlarl {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  invalid_argument,
  state,
  config,
  numeric,
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error invalid_argument(const std::string& what) {
  return Error(ErrorKind::invalid_argument, what);
}
inline Error state_error(const std::string& what) {
  return Error(ErrorKind::state, what);
}
inline Error config_error(const std::string& what) {
  return Error(ErrorKind::config, what);
}
inline Error numeric_error(const std::string& what) {
  return Error(ErrorKind::numeric, what);
}
inline Error io_error(const std::string& what) {
  return Error(ErrorKind::io, what);
}

}  // namespace vlarl
