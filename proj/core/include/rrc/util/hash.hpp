#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace rrc {

/// Lower-case hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

/// `n_bytes` of CSPRNG output, hex encoded.
std::string random_hex(std::size_t n_bytes);

struct PasswordCost {
  unsigned long long ops;
  std::size_t mem_bytes;

  static PasswordCost interactive();
  /// Cheapest parameters libsodium accepts; for tests only.
  static PasswordCost minimum();
};

/// Argon2id encoded hash (salt and parameters included).
std::string password_hash(std::string_view password, PasswordCost cost);
bool password_verify(std::string_view encoded, std::string_view password);

std::string base64_encode(std::string_view bytes);

}  // namespace rrc
