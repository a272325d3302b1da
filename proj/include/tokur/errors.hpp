#pragma once

#include <stdexcept>
#include <string>

namespace tokur {

// Error taxonomy shared by the library and the CLI. The CLI maps kinds to
// process exit codes (config=2, data_format=3, capacity=4).
enum class ErrorKind {
  invalid_input,
  config,
  data_format,
  capacity,
  undefined_metric,
  internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_invalid(const std::string& msg) {
  throw Error(ErrorKind::invalid_input, msg);
}
[[noreturn]] inline void throw_config(const std::string& msg) {
  throw Error(ErrorKind::config, msg);
}
[[noreturn]] inline void throw_data_format(const std::string& msg) {
  throw Error(ErrorKind::data_format, msg);
}
[[noreturn]] inline void throw_capacity(const std::string& msg) {
  throw Error(ErrorKind::capacity, msg);
}

}  // namespace tokur
