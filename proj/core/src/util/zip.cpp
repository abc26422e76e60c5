#include "rrc/util/zip.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <limits>

#include <fmt/format.h>

#include "rrc/error.hpp"

namespace rrc::zip {

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint16_t kDosDate1980 = (0 << 9) | (1 << 5) | 1;

[[noreturn]] void corrupt(const std::string& why) {
  throw Error("CorruptArchive", "archive is not a readable ZIP file: " + why);
}

class Cursor {
 public:
  Cursor(std::string_view bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  std::uint16_t u16() {
    need(2);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 2;
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) { take(n); }

 private:
  void need(std::size_t n) const {
    if (pos_ > bytes_.size() || bytes_.size() - pos_ < n) corrupt("truncated structure");
  }
  std::string_view bytes_;
  std::size_t pos_;
};

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t crc_of(std::string_view data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data() + off), chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string inflate_raw(std::string_view in, std::uint32_t expected_size) {
  std::string out(expected_size, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) corrupt("zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = inflate(&zs, Z_FINISH);
  // A stream that decodes to exactly expected_size bytes but has trailing
  // output would report Z_BUF_ERROR; probe with a one-byte buffer.
  if (rc == Z_BUF_ERROR && zs.avail_out == 0) {
    char probe;
    zs.next_out = reinterpret_cast<Bytef*>(&probe);
    zs.avail_out = 1;
    rc = inflate(&zs, Z_FINISH);
    if (rc != Z_STREAM_END || zs.avail_out == 0) {
      inflateEnd(&zs);
      corrupt("deflate stream longer than declared size");
    }
  }
  const bool ok = rc == Z_STREAM_END && zs.total_out == expected_size;
  inflateEnd(&zs);
  if (!ok) corrupt("bad deflate stream");
  return out;
}

std::string deflate_raw(std::string_view in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, -MAX_WBITS, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error("IoError", "zlib deflate init failed");
  }
  std::string out(deflateBound(&zs, static_cast<uLong>(in.size())), '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error("IoError", "zlib deflate failed");
  return out;
}

}  // namespace

std::vector<Entry> read_archive(std::string_view bytes, std::uint64_t max_total_uncompressed) {
  if (bytes.size() < 22) corrupt("too small");
  // The end-of-central-directory record sits within the last 64 KiB + 22 bytes.
  const std::size_t lowest = bytes.size() > 65557 ? bytes.size() - 65557 : 0;
  std::size_t eocd = std::string_view::npos;
  for (std::size_t i = bytes.size() - 22 + 1; i-- > lowest;) {
    if (Cursor(bytes, i).u32() == kEndSig) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string_view::npos) corrupt("no end-of-central-directory record");

  Cursor end(bytes, eocd + 4);
  const auto disk = end.u16();
  const auto cd_disk = end.u16();
  end.u16();
  const auto count = end.u16();
  end.u32();
  const auto cd_offset = end.u32();
  if (disk != 0 || cd_disk != 0) corrupt("multi-disk archives are not supported");
  if (cd_offset == 0xffffffffu || count == 0xffff) corrupt("zip64 is not supported");

  std::vector<Entry> entries;
  entries.reserve(count);
  std::uint64_t total = 0;
  Cursor cd(bytes, cd_offset);
  for (std::uint16_t i = 0; i < count; ++i) {
    if (cd.u32() != kCentralSig) corrupt("bad central directory signature");
    cd.u16();  // version made by
    cd.u16();  // version needed
    const auto flags = cd.u16();
    const auto method = cd.u16();
    cd.u16();
    cd.u16();
    const auto crc = cd.u32();
    const auto csize = cd.u32();
    const auto usize = cd.u32();
    const auto name_len = cd.u16();
    const auto extra_len = cd.u16();
    const auto comment_len = cd.u16();
    cd.u16();
    cd.u16();
    const auto external = cd.u32();
    const auto local_offset = cd.u32();
    std::string name(cd.take(name_len));
    cd.skip(extra_len);
    cd.skip(comment_len);

    if (flags & 0x1) corrupt("encrypted entries are not supported");
    if (csize == 0xffffffffu || usize == 0xffffffffu || local_offset == 0xffffffffu) {
      corrupt("zip64 is not supported");
    }
    total += usize;
    if (total > max_total_uncompressed) corrupt("uncompressed size exceeds limit");

    Cursor local(bytes, local_offset);
    if (local.u32() != kLocalSig) corrupt("bad local header signature");
    local.skip(22);
    const auto lname_len = local.u16();
    const auto lextra_len = local.u16();
    local.skip(lname_len);
    local.skip(lextra_len);
    const auto payload = local.take(csize);

    Entry e;
    e.name = std::move(name);
    e.is_directory = !e.name.empty() && e.name.back() == '/';
    e.unix_mode = (external >> 16) & 07777;
    if (e.unix_mode == 0) e.unix_mode = 0644;
    if (method == 0) {
      if (csize != usize) corrupt("stored entry size mismatch");
      e.data.assign(payload);
    } else if (method == 8) {
      e.data = inflate_raw(payload, usize);
    } else {
      corrupt(fmt::format("unsupported compression method {}", method));
    }
    if (crc_of(e.data) != crc) corrupt("CRC mismatch in " + e.name);
    entries.push_back(std::move(e));
  }
  return entries;
}

void Writer::add(std::string name, std::string_view data, std::uint32_t unix_mode) {
  if (data.size() > std::numeric_limits<std::uint32_t>::max() ||
      out_.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error("IoError", "zip64 archives are not supported");
  }
  const bool deflated = method_ == Method::Deflate && !data.empty();
  const std::string packed = deflated ? deflate_raw(data) : std::string();
  const std::string_view payload = deflated ? std::string_view(packed) : data;
  Central c{std::move(name),
            crc_of(data),
            static_cast<std::uint32_t>(payload.size()),
            static_cast<std::uint32_t>(data.size()),
            static_cast<std::uint32_t>(out_.size()),
            static_cast<std::uint16_t>(deflated ? 8 : 0),
            unix_mode};

  put32(out_, kLocalSig);
  put16(out_, 20);
  put16(out_, 0x0800);  // UTF-8 names
  put16(out_, c.method);
  put16(out_, 0);
  put16(out_, kDosDate1980);
  put32(out_, c.crc);
  put32(out_, c.compressed_size);
  put32(out_, c.size);
  put16(out_, static_cast<std::uint16_t>(c.name.size()));
  put16(out_, 0);
  out_ += c.name;
  out_ += payload;
  central_.push_back(std::move(c));
}

std::string Writer::finish() {
  const auto cd_offset = static_cast<std::uint32_t>(out_.size());
  for (const auto& c : central_) {
    put32(out_, kCentralSig);
    put16(out_, (3 << 8) | 20);  // made by UNIX
    put16(out_, 20);
    put16(out_, 0x0800);
    put16(out_, c.method);
    put16(out_, 0);
    put16(out_, kDosDate1980);
    put32(out_, c.crc);
    put32(out_, c.compressed_size);
    put32(out_, c.size);
    put16(out_, static_cast<std::uint16_t>(c.name.size()));
    put16(out_, 0);
    put16(out_, 0);
    put16(out_, 0);
    put16(out_, 0);
    const std::uint32_t type = (!c.name.empty() && c.name.back() == '/') ? 0040000 : 0100000;
    put32(out_, (type | c.unix_mode) << 16);
    put32(out_, c.offset);
    out_ += c.name;
  }
  const auto cd_size = static_cast<std::uint32_t>(out_.size() - cd_offset);
  put32(out_, kEndSig);
  put16(out_, 0);
  put16(out_, 0);
  put16(out_, static_cast<std::uint16_t>(central_.size()));
  put16(out_, static_cast<std::uint16_t>(central_.size()));
  put32(out_, cd_size);
  put32(out_, cd_offset);
  put16(out_, 0);
  central_.clear();
  return std::move(out_);
}

std::string write_sorted(std::vector<Entry> entries, Method method) {
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.name < b.name; });
  Writer w(method);
  for (const auto& e : entries) w.add(e.name, e.data, e.unix_mode);
  return w.finish();
}

}  // namespace rrc::zip
