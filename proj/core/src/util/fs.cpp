#include "rrc/util/fs.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <utility>

#include <fmt/format.h>

#include "rrc/error.hpp"

namespace rrc::fs {

namespace {

[[noreturn]] void throw_errno(std::string_view what, const stdfs::path& path) {
  throw Error("IoError", fmt::format("{} {}: {}", what, path.string(), std::strerror(errno)));
}

void write_all(int fd, std::string_view bytes, const stdfs::path& path) {
  const char* p = bytes.data();
  std::size_t left = bytes.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write", path);
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

void write_new_file(const stdfs::path& path, std::string_view bytes) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
  if (fd < 0) throw_errno("create", path);
  try {
    write_all(fd, bytes, path);
    if (::fsync(fd) != 0) throw_errno("fsync", path);
  } catch (...) {
    ::close(fd);
    ::unlink(path.c_str());
    throw;
  }
  ::close(fd);
}

std::mutex g_fault_mutex;
std::string g_fault_name;
FaultAction g_fault_action = FaultAction::Throw;
std::atomic<bool> g_fault_armed{false};

}  // namespace

std::string read_file(const stdfs::path& path) {
  auto content = try_read_file(path);
  if (!content) throw Error("NotFound", fmt::format("cannot read {}", path.string()));
  return std::move(*content);
}

std::optional<std::string> try_read_file(const stdfs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream out;
  out << in.rdbuf();
  return std::move(out).str();
}

stdfs::path temp_sibling(const stdfs::path& target) {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  return target.parent_path() /
         fmt::format(".tmp-{}-{:016x}-{}", ::getpid(), rng(), target.filename().string());
}

void write_file_atomic(const stdfs::path& target, std::string_view bytes) {
  const auto tmp = temp_sibling(target);
  write_new_file(tmp, bytes);
  if (::rename(tmp.c_str(), target.c_str()) != 0) {
    ::unlink(tmp.c_str());
    throw_errno("rename", target);
  }
}

bool write_file_if_absent(const stdfs::path& target, std::string_view bytes) {
  const auto tmp = temp_sibling(target);
  write_new_file(tmp, bytes);
  const int rc = ::link(tmp.c_str(), target.c_str());
  const int err = errno;
  ::unlink(tmp.c_str());
  if (rc == 0) return true;
  if (err == EEXIST) return false;
  errno = err;
  throw_errno("link", target);
}

bool rename_noreplace(const stdfs::path& from, const stdfs::path& to) {
  if (::renameat2(AT_FDCWD, from.c_str(), AT_FDCWD, to.c_str(), RENAME_NOREPLACE) == 0) {
    return true;
  }
  if (errno == EEXIST || errno == ENOENT || errno == ENOTEMPTY) return false;
  throw_errno("renameat2", to);
}

void append_line(const stdfs::path& path, std::string_view line) {
  std::string buf(line);
  buf.push_back('\n');
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw_errno("open", path);
  try {
    write_all(fd, buf, path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

bool is_temp_name(std::string_view name) { return name.starts_with(".tmp-"); }

std::vector<std::string> list_names(const stdfs::path& dir) {
  std::vector<std::string> names;
  std::error_code ec;
  for (stdfs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    auto name = it->path().filename().string();
    if (!is_temp_name(name)) names.push_back(std::move(name));
  }
  std::sort(names.begin(), names.end());
  return names;
}

FileLock::FileLock(const stdfs::path& path) : FileLock(path, false) {}

FileLock::FileLock(const stdfs::path& path, bool try_only) {
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw_errno("open lock", path);
  int rc;
  do {
    rc = ::flock(fd_, LOCK_EX | (try_only ? LOCK_NB : 0));
  } while (rc != 0 && errno == EINTR);
  if (rc == 0) {
    owned_ = true;
  } else if (!(try_only && errno == EWOULDBLOCK)) {
    ::close(fd_);
    fd_ = -1;
    throw_errno("flock", path);
  }
}

FileLock::~FileLock() {
  if (fd_ >= 0) ::close(fd_);
}

FileLock::FileLock(FileLock&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), owned_(std::exchange(other.owned_, false)) {}

FileLock& FileLock::operator=(FileLock&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
    owned_ = std::exchange(other.owned_, false);
  }
  return *this;
}

void arm_fault(std::string name, FaultAction action) {
  std::lock_guard lock(g_fault_mutex);
  g_fault_name = std::move(name);
  g_fault_action = action;
  g_fault_armed = true;
}

void disarm_faults() {
  std::lock_guard lock(g_fault_mutex);
  g_fault_name.clear();
  g_fault_armed = false;
}

void fault_point(std::string_view name) {
  if (!g_fault_armed.load(std::memory_order_relaxed)) return;
  std::lock_guard lock(g_fault_mutex);
  if (!g_fault_armed || g_fault_name != name) return;
  if (g_fault_action == FaultAction::Exit) std::_Exit(86);
  g_fault_armed = false;
  throw InjectedCrash{std::string(name)};
}

}  // namespace rrc::fs
