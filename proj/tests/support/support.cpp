#include "support.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "rrc/util/image.hpp"
#include "rrc/util/zip.hpp"

namespace rrc::test {

TempDir::TempDir() {
  std::string tmpl = (stdfs::temp_directory_path() / "rrc-test-XXXXXX").string();
  if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  stdfs::remove_all(path_, ec);
}

std::string read_file(const stdfs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const stdfs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) stdfs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

std::string make_zip(const std::map<std::string, std::string>& files) {
  zip::Writer w(zip::Method::Deflate);
  for (const auto& [name, data] : files) w.add(name, data);
  return w.finish();
}

std::array<geometry::Point, 4> random_corners(std::mt19937_64& rng, double span,
                                              double min_size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (true) {
    // Four points on an ellipse at sorted random angles form a convex quad.
    const double a = min_size + u(rng) * (span / 3 - min_size);
    const double b = min_size + u(rng) * (span / 3 - min_size);
    const double cx = a + u(rng) * (span - 2 * a), cy = b + u(rng) * (span - 2 * b);
    const double rot = u(rng) * 2 * std::numbers::pi;
    std::array<double, 4> t;
    for (auto& x : t) x = u(rng) * 2 * std::numbers::pi;
    std::sort(t.begin(), t.end());
    // Reject nearly coincident angles (near-degenerate corners).
    bool ok = true;
    for (int i = 0; i < 4; ++i) {
      const double gap = i < 3 ? t[i + 1] - t[i] : t[0] + 2 * std::numbers::pi - t[3];
      if (gap < 0.25) ok = false;
    }
    if (!ok) continue;
    std::array<geometry::Point, 4> p;
    for (int i = 0; i < 4; ++i) {
      const double x = a * std::cos(t[i]), y = b * std::sin(t[i]);
      p[i] = {cx + x * std::cos(rot) - y * std::sin(rot), cy + x * std::sin(rot) + y * std::cos(rot)};
    }
    if (u(rng) < 0.5) std::reverse(p.begin(), p.end());
    std::rotate(p.begin(), p.begin() + static_cast<int>(u(rng) * 4) % 4, p.end());
    try {
      geometry::canonicalize_quad(p);
      return p;
    } catch (const geometry::GeometryError&) {
    }
  }
}

geometry::Quad random_quad(std::mt19937_64& rng, double span, double min_size) {
  return geometry::canonicalize_quad(random_corners(rng, span, min_size));
}

geometry::Quad quad_inside(std::mt19937_64& rng, const geometry::Quad& outer) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  // Random interior centre as a convex combination of the corners.
  std::array<double, 4> w;
  double sum = 0;
  for (auto& x : w) sum += (x = u(rng));
  geometry::Point c{0, 0};
  for (int i = 0; i < 4; ++i) {
    c.x += outer[i].x * w[i] / sum;
    c.y += outer[i].y * w[i] / sum;
  }
  const double s = 0.1 + 0.8 * u(rng);
  std::array<geometry::Point, 4> p;
  for (int i = 0; i < 4; ++i) p[i] = {c.x + (outer[i].x - c.x) * s, c.y + (outer[i].y - c.y) * s};
  return geometry::canonicalize_quad(p);
}

geometry::Quad rect(double x0, double y0, double x1, double y1) {
  return geometry::axis_rect(x0, y0, x1, y1);
}

ingest::Detection det(const geometry::Quad& q, std::optional<std::string> text) {
  ingest::Detection d;
  d.quad = q;
  d.transcription = std::move(text);
  return d;
}

evalcore::GtWord gt_word(std::string id, const geometry::Quad& q, std::string text, bool care) {
  return {std::move(id), q, std::move(text), care};
}

Scene random_scene(std::mt19937_64& rng, int max_gt, int max_det, double dontcare_rate) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scene s;
  s.gt.image_id = "scene";
  const int ng = static_cast<int>(u(rng) * (max_gt + 1));
  const int nd = static_cast<int>(u(rng) * (max_det + 1));
  for (int i = 0; i < ng; ++i) {
    s.gt.words.push_back(gt_word("w" + std::to_string(i + 1), random_quad(rng, 60.0, 4.0),
                                 "t" + std::to_string(i), u(rng) >= dontcare_rate));
  }
  std::normal_distribution<double> jitter(0.0, 1.5);
  for (int i = 0; i < nd; ++i) {
    if (ng > 0 && u(rng) < 0.75) {
      const auto& g = *s.gt.words[static_cast<std::size_t>(u(rng) * ng) % ng].quad;
      std::array<geometry::Point, 4> p;
      for (int k = 0; k < 4; ++k) p[k] = {g[k].x + jitter(rng), g[k].y + jitter(rng)};
      try {
        s.dets.push_back(det(geometry::canonicalize_quad(p), "t0"));
        continue;
      } catch (const geometry::GeometryError&) {
      }
    }
    s.dets.push_back(det(random_quad(rng, 60.0, 4.0), "t0"));
  }
  return s;
}

pid_t spawn(const std::vector<std::string>& argv, const std::optional<stdfs::path>& log) {
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  if (log && log->has_parent_path()) stdfs::create_directories(log->parent_path());
  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    if (log) {
      const int fd = ::open(log->c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
      if (fd >= 0) {
        ::dup2(fd, 1);
        ::dup2(fd, 2);
      }
    }
    ::execv(args[0], args.data());
    ::_exit(127);
  }
  return pid;
}

int wait_for(pid_t pid) {
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) return -1;
  }
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return -1;
}

std::string tiny_png(std::uint64_t seed, int width, int height) {
  std::mt19937_64 rng(seed);
  image::Raster r{width, height, {}};
  r.rgb.resize(static_cast<std::size_t>(width) * height * 3);
  for (auto& px : r.rgb) px = static_cast<std::uint8_t>(rng() & 0xFF);
  return image::encode_png(r);
}

annotation::Tree sample_tree(double dx) {
  using annotation::Granularity;
  using annotation::Node;
  auto q = [dx](double x0, double y0, double x1, double y1) {
    return geometry::axis_rect(x0 + dx, y0, x1 + dx, y1);
  };
  Node c1{"l1_w1_c1", Granularity::Char, q(10, 10, 20, 30), "O", true, {}, {}};
  Node c2{"l1_w1_c2", Granularity::Char, q(20, 10, 30, 30), "K", true, {}, {}};
  Node w1{"l1_w1", Granularity::Word, q(10, 10, 30, 30), "OK", true, {{"script", "latin"}}, {c1, c2}};
  Node w2{"l1_w2", Granularity::Word, q(40, 10, 90, 30), "", false, {}, {}};
  Node l1{"l1", Granularity::Line, q(5, 5, 95, 35), "", true, {}, {w1, w2}};
  Node w3{"l2_w1", Granularity::Word, q(10, 50, 60, 70), "Caf\xC3\xA9 & <bar>", true, {}, {}};
  Node l2{"l2", Granularity::Line, q(5, 45, 95, 75), "", true, {}, {w3}};
  return {l1, l2};
}

}  // namespace rrc::test
