#pragma once

#include <stdexcept>
#include <string>

namespace muse {

// Error categories map onto CLI exit codes: config=2, data=3, internal=4.
enum class ErrorKind { config, data, internal };

class MuseError : public std::runtime_error {
 public:
  MuseError(ErrorKind kind, std::string msg)
      : std::runtime_error(std::move(msg)), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::config: return 2;
      case ErrorKind::data: return 3;
      case ErrorKind::internal: return 4;
    }
    return 4;
  }

  const char *kind_name() const noexcept {
    switch (kind_) {
      case ErrorKind::config: return "config";
      case ErrorKind::data: return "data";
      case ErrorKind::internal: return "internal";
    }
    return "internal";
  }

 private:
  ErrorKind kind_;
};

inline MuseError config_error(std::string msg) {
  return MuseError(ErrorKind::config, std::move(msg));
}
inline MuseError data_error(std::string msg) {
  return MuseError(ErrorKind::data, std::move(msg));
}
inline MuseError internal_error(std::string msg) {
  return MuseError(ErrorKind::internal, std::move(msg));
}

}  // namespace muse
