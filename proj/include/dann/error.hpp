#pragma once

#include <stdexcept>
#include <string>

namespace dann {

// Failure classes. The CLI maps them onto distinct exit codes:
// config -> 2, data/io/label -> 3, shape/state/numeric -> 4.
enum class ErrorKind { Config, Data, Io, Shape, State, Label, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::Config:
        return 2;
      case ErrorKind::Data:
      case ErrorKind::Io:
      case ErrorKind::Label:
        return 3;
      default:
        return 4;
    }
  }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& msg) { return {ErrorKind::Config, msg}; }
inline Error data_error(const std::string& msg) { return {ErrorKind::Data, msg}; }
inline Error io_error(const std::string& msg) { return {ErrorKind::Io, msg}; }
inline Error shape_error(const std::string& msg) { return {ErrorKind::Shape, msg}; }
inline Error state_error(const std::string& msg) { return {ErrorKind::State, msg}; }
inline Error label_error(const std::string& msg) { return {ErrorKind::Label, msg}; }
inline Error numeric_error(const std::string& msg) { return {ErrorKind::Numeric, msg}; }

}  // namespace dann
