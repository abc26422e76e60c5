#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rrc::zip {

struct Entry {
  std::string name;
  std::string data;
  bool is_directory = false;
  std::uint32_t unix_mode = 0644;
};

enum class Method { Stored, Deflate };

/// Reads every entry of an in-memory ZIP archive (stored + deflate, no
/// zip64, no encryption). Sizes and CRCs are verified. Throws
/// rrc::Error("CorruptArchive") on anything unreadable.
std::vector<Entry> read_archive(std::string_view bytes,
                                std::uint64_t max_total_uncompressed = 2ull << 30);

/// Writes entries in the given order with zeroed (1980-01-01) timestamps, so
/// identical input produces identical bytes.
class Writer {
 public:
  explicit Writer(Method method = Method::Stored) : method_(method) {}

  void add(std::string name, std::string_view data, std::uint32_t unix_mode = 0644);
  std::string finish();

 private:
  struct Central {
    std::string name;
    std::uint32_t crc;
    std::uint32_t compressed_size;
    std::uint32_t size;
    std::uint32_t offset;
    std::uint16_t method;
    std::uint32_t unix_mode;
  };
  Method method_;
  std::string out_;
  std::vector<Central> central_;
};

/// Convenience: sort entries by name and write them.
std::string write_sorted(std::vector<Entry> entries, Method method = Method::Stored);

}  // namespace rrc::zip
