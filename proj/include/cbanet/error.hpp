#pragma once

#include <stdexcept>
#include <string>

namespace cbanet {

// Maps one-to-one onto the CLI exit codes.
enum class ErrorKind {
  kInvalidArgument = 1,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kDivergence = 5,
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
  return Error(ErrorKind::kInvalidArgument, what);
}
inline Error usage_error(const std::string& what) {
  return Error(ErrorKind::kUsage, what);
}
inline Error config_error(const std::string& what) {
  return Error(ErrorKind::kConfig, what);
}
inline Error data_error(const std::string& what) {
  return Error(ErrorKind::kData, what);
}
inline Error divergence_error(const std::string& what) {
  return Error(ErrorKind::kDivergence, what);
}

}  // namespace cbanet
