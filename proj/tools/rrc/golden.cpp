#include "golden.hpp"

#include <cmath>
#include <numbers>

namespace rrc::tools {

geometry::Quad random_quad(std::mt19937_64& rng, double span) {
  std::uniform_real_distribution<double> pos(0.1 * span, 0.9 * span);
  std::uniform_real_distribution<double> size(0.01 * span, 0.2 * span);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> jitter(-0.25, 0.25);
  while (true) {
    const double cx = pos(rng), cy = pos(rng), w = size(rng), h = size(rng) * 0.5, a = angle(rng);
    std::array<geometry::Point, 4> pts;
    const double dx[] = {-1, 1, 1, -1}, dy[] = {-1, -1, 1, 1};
    for (int i = 0; i < 4; ++i) {
      const double x = dx[i] * w / 2 * (1 + jitter(rng)), y = dy[i] * h / 2 * (1 + jitter(rng));
      pts[i] = {cx + x * std::cos(a) - y * std::sin(a), cy + x * std::sin(a) + y * std::cos(a)};
    }
    try {
      return geometry::canonicalize_quad(pts);
    } catch (const geometry::GeometryError&) {
    }
  }
}

nlohmann::ordered_json golden_vectors(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  nlohmann::ordered_json out;
  out["version"] = 1;
  out["seed"] = seed;
  out["tolerance"] = 1e-6;
  out["convention"] =
      "corner i of points maps to (0,0), (width,0), (width,height), (0,height); "
      "homography is row-major with m[8] = 1";
  out["vectors"] = nlohmann::ordered_json::array();
  for (int i = 0; i < count; ++i) {
    const auto q = random_quad(rng);
    const auto size = geometry::rectified_size(q);
    const auto h = geometry::rectification_homography(q, size.width, size.height);
    nlohmann::ordered_json v;
    const auto f = q.flat();
    v["points"] = std::vector<double>(f.begin(), f.end());
    v["width"] = size.width;
    v["height"] = size.height;
    v["homography"] = h.m;
    out["vectors"].push_back(v);
  }
  return out;
}

}  // namespace rrc::tools
