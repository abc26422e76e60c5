#pragma once

#include <stdexcept>
#include <string>

namespace rrc {

/// Base of every error raised by the platform.
///
/// `code()` is a stable identifier (`"StaleHead"`, `"InvalidQuad"`, ...) that
/// the HTTP layer and the CLI surface verbatim; `what()` carries a human
/// readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace rrc
