#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rrc::fs {

namespace stdfs = std::filesystem;

std::string read_file(const stdfs::path& path);
std::optional<std::string> try_read_file(const stdfs::path& path);

/// Unique sibling name for staging writes (`.tmp-<pid>-<random>`); readers
/// skip anything starting with `.tmp-`.
stdfs::path temp_sibling(const stdfs::path& target);

/// Writes `bytes` to a temporary sibling, fsyncs, then renames over `target`.
/// Readers observe either the old or the new content, never a partial file.
void write_file_atomic(const stdfs::path& target, std::string_view bytes);

/// Writes `bytes` to a temporary sibling and hard-links it to `target`.
/// Returns false (and leaves `target` untouched) when `target` already exists.
bool write_file_if_absent(const stdfs::path& target, std::string_view bytes);

/// rename(2) that refuses to replace an existing destination. Works for files
/// and directories. Returns false when `to` exists or `from` has vanished.
bool rename_noreplace(const stdfs::path& from, const stdfs::path& to);

/// Appends one line with a single write(2) on an O_APPEND descriptor.
void append_line(const stdfs::path& path, std::string_view line);

/// Directory entries (file names only), sorted, with staging files skipped.
std::vector<std::string> list_names(const stdfs::path& dir);

bool is_temp_name(std::string_view name);

/// Exclusive advisory lock on a lock file (flock). Released on destruction
/// or when the holding process dies.
class FileLock {
 public:
  explicit FileLock(const stdfs::path& path);
  /// Non-blocking variant; check `owns_lock()`.
  FileLock(const stdfs::path& path, bool try_only);
  ~FileLock();

  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;
  FileLock(FileLock&& other) noexcept;
  FileLock& operator=(FileLock&& other) noexcept;

  bool owns_lock() const noexcept { return owned_; }

 private:
  int fd_ = -1;
  bool owned_ = false;
};

/// Crash-injection hook for tests. Production code calls `fault_point(name)`
/// between durable write steps; when a test has armed `name`, the hook fires.
enum class FaultAction { Throw, Exit };
void arm_fault(std::string name, FaultAction action);
void disarm_faults();
void fault_point(std::string_view name);

/// Thrown by an armed fault point in Throw mode.
struct InjectedCrash {
  std::string point;
};

}  // namespace rrc::fs
