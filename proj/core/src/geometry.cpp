#include "rrc/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace rrc::geometry {

namespace {

double cross(Point o, Point a, Point b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

int orientation_sign(Point o, Point a, Point b) {
  const double c = cross(o, a, b);
  if (c > kEpsilon) return 1;
  if (c < -kEpsilon) return -1;
  return 0;
}

// Proper crossing only: collinear overlaps are left to the area check.
bool segments_cross(Point a, Point b, Point c, Point d) {
  const int o1 = orientation_sign(a, b, c);
  const int o2 = orientation_sign(a, b, d);
  const int o3 = orientation_sign(c, d, a);
  const int o4 = orientation_sign(c, d, b);
  return o1 * o2 < 0 && o3 * o4 < 0;
}

template <typename Range>
double signed_area_of(const Range& pts) {
  const std::size_t n = std::size(pts);
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = pts[i];
    const Point& q = pts[(i + 1) % n];
    twice += p.x * q.y - q.x * p.y;
  }
  return twice / 2.0;
}

// Signed distance-like value: >= 0 means on the inner side of edge a->b for
// a positively oriented (screen-clockwise) polygon.
double side(Point a, Point b, Point p) { return cross(a, b, p); }

std::vector<Point> clip_half_plane(const std::vector<Point>& in, Point a, Point b) {
  std::vector<Point> out;
  if (in.empty()) return out;
  out.reserve(in.size() + 1);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Point& s = in[i];
    const Point& e = in[(i + 1) % in.size()];
    const double ds = side(a, b, s);
    const double de = side(a, b, e);
    const bool s_in = ds >= 0.0;
    const bool e_in = de >= 0.0;
    if (s_in) out.push_back(s);
    if (s_in != e_in) {
      const double t = ds / (ds - de);
      out.push_back({s.x + t * (e.x - s.x), s.y + t * (e.y - s.y)});
    }
  }
  return out;
}

void drop_duplicates(std::vector<Point>& pts) {
  auto near = [](Point p, Point q) {
    return std::abs(p.x - q.x) <= kEpsilon && std::abs(p.y - q.y) <= kEpsilon;
  };
  std::vector<Point> kept;
  kept.reserve(pts.size());
  for (const auto& p : pts) {
    if (kept.empty() || !near(kept.back(), p)) kept.push_back(p);
  }
  while (kept.size() > 1 && near(kept.front(), kept.back())) kept.pop_back();
  pts = std::move(kept);
}

}  // namespace

std::array<double, 8> Quad::flat() const noexcept {
  std::array<double, 8> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[2 * i] = corners_[i].x;
    out[2 * i + 1] = corners_[i].y;
  }
  return out;
}

Quad canonicalize_quad(const std::array<Point, 4>& raw) {
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(raw[i].x) || !std::isfinite(raw[i].y)) {
      throw GeometryError("NonFinite", fmt::format("corner {} is not finite", i), {i});
    }
  }
  if (segments_cross(raw[0], raw[1], raw[2], raw[3])) {
    throw GeometryError("SelfIntersecting", "edges 0-1 and 2-3 cross", {0, 1, 2, 3});
  }
  if (segments_cross(raw[1], raw[2], raw[3], raw[0])) {
    throw GeometryError("SelfIntersecting", "edges 1-2 and 3-0 cross", {1, 2, 3, 0});
  }
  const double a = signed_area_of(raw);
  if (std::abs(a) <= kEpsilon) {
    throw GeometryError("ZeroArea", "quadrilateral has zero area", {0, 1, 2, 3});
  }
  const int orient = a > 0 ? 1 : -1;
  for (int i = 0; i < 4; ++i) {
    const int s = orientation_sign(raw[(i + 3) % 4], raw[i], raw[(i + 1) % 4]);
    if (s != orient) {
      throw GeometryError("NonConvex",
                          s == 0 ? fmt::format("corner {} is collinear with its neighbours", i)
                                 : fmt::format("corner {} is reflex", i),
                          {i});
    }
  }

  std::array<Point, 4> pts = raw;
  if (orient < 0) std::swap(pts[1], pts[3]);
  std::size_t start = 0;
  for (std::size_t i = 1; i < 4; ++i) {
    const double si = pts[i].x + pts[i].y;
    const double sb = pts[start].x + pts[start].y;
    if (si < sb || (si == sb && pts[i].y < pts[start].y)) start = i;
  }
  std::rotate(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(start), pts.end());
  return Quad(pts);
}

Quad canonicalize_quad(std::span<const double> raw) {
  if (raw.size() != 8) {
    throw GeometryError("WrongCoordinateCount",
                        fmt::format("expected 8 coordinates, got {}", raw.size()), {});
  }
  return canonicalize_quad(std::array<Point, 4>{
      Point{raw[0], raw[1]}, Point{raw[2], raw[3]}, Point{raw[4], raw[5]}, Point{raw[6], raw[7]}});
}

Quad axis_rect(double x0, double y0, double x1, double y1) {
  const double l = std::min(x0, x1), r = std::max(x0, x1);
  const double t = std::min(y0, y1), b = std::max(y0, y1);
  return canonicalize_quad(std::array<Point, 4>{Point{l, t}, Point{r, t}, Point{r, b}, Point{l, b}});
}

double area(const Quad& q) { return std::abs(signed_area_of(q.corners())); }

double area(const ConvexPolygon& p) {
  if (p.vertices.size() < 3) return 0.0;
  return std::max(0.0, signed_area_of(p.vertices));
}

ConvexPolygon intersect(const Quad& a, const Quad& b) {
  std::vector<Point> poly(a.corners().begin(), a.corners().end());
  const auto& c = b.corners();
  for (std::size_t i = 0; i < 4 && !poly.empty(); ++i) {
    poly = clip_half_plane(poly, c[i], c[(i + 1) % 4]);
  }
  drop_duplicates(poly);
  if (poly.size() < 3 || signed_area_of(poly) <= 0.0) return {};
  return ConvexPolygon{std::move(poly)};
}

double intersection_area(const Quad& a, const Quad& b) {
  return (b < a) ? area(intersect(b, a)) : area(intersect(a, b));
}

double iou(const Quad& a, const Quad& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = area(a) + area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double Homography::determinant() const noexcept {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::inverse() const {
  const double det = determinant();
  if (std::abs(det) <= 1e-300) {
    throw GeometryError("DegenerateQuad", "homography is not invertible", {});
  }
  Homography inv;
  inv.m = {m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
           m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
           m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
  const double scale = inv.m[8];
  if (std::abs(scale) < 1e-300) {
    for (auto& v : inv.m) v /= det;
  } else {
    for (auto& v : inv.m) v /= scale;
  }
  return inv;
}

namespace {

// Similarity that moves the centroid to the origin and scales the mean
// distance to sqrt(2); conditions the linear system.
std::array<double, 3> normalizer(const std::array<Point, 4>& pts) {
  double cx = 0, cy = 0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= 4;
  cy /= 4;
  double mean = 0;
  for (const auto& p : pts) mean += std::hypot(p.x - cx, p.y - cy);
  mean /= 4;
  const double s = mean > 0 ? std::sqrt(2.0) / mean : 1.0;
  return {s, -s * cx, -s * cy};
}

// Solves A x = b in place (partial pivoting); false when a pivot falls below
// the singularity tolerance.
bool solve8(std::array<std::array<double, 9>, 8>& aug) {
  constexpr int n = 8;
  for (int col = 0; col < n; ++col) {
    int best = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(aug[r][col]) > std::abs(aug[best][col])) best = r;
    }
    if (std::abs(aug[best][col]) < 1e-9) return false;
    std::swap(aug[col], aug[best]);
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = aug[r][col] / aug[col][col];
      if (f == 0.0) continue;
      for (int c = col; c <= n; ++c) aug[r][c] -= f * aug[col][c];
    }
  }
  for (int r = 0; r < n; ++r) aug[r][n] /= aug[r][r];
  return true;
}

std::array<double, 9> multiply(const std::array<double, 9>& a, const std::array<double, 9>& b) {
  std::array<double, 9> r{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      r[i * 3 + j] = s;
    }
  }
  return r;
}

}  // namespace

Homography rectification_homography(const Quad& q, double out_w, double out_h) {
  if (!(out_w > 0) || !(out_h > 0) || !std::isfinite(out_w) || !std::isfinite(out_h)) {
    throw GeometryError("BadOutputSize", "output width and height must be positive", {});
  }
  const std::array<Point, 4> dst{Point{0, 0}, Point{out_w, 0}, Point{out_w, out_h},
                                 Point{0, out_h}};
  const auto ns = normalizer(q.corners());
  const auto nd = normalizer(dst);

  std::array<std::array<double, 9>, 8> aug{};
  for (int i = 0; i < 4; ++i) {
    const double x = ns[0] * q[i].x + ns[1];
    const double y = ns[0] * q[i].y + ns[2];
    const double u = nd[0] * dst[i].x + nd[1];
    const double v = nd[0] * dst[i].y + nd[2];
    aug[2 * i] = {x, y, 1, 0, 0, 0, -x * u, -y * u, u};
    aug[2 * i + 1] = {0, 0, 0, x, y, 1, -x * v, -y * v, v};
  }
  if (!solve8(aug)) {
    throw GeometryError("DegenerateQuad", "rectification system is singular", {0, 1, 2, 3});
  }
  const std::array<double, 9> hn{aug[0][8], aug[1][8], aug[2][8], aug[3][8], aug[4][8],
                                 aug[5][8], aug[6][8], aug[7][8], 1.0};
  const std::array<double, 9> t_src{ns[0], 0, ns[1], 0, ns[0], ns[2], 0, 0, 1};
  const std::array<double, 9> t_dst_inv{1 / nd[0], 0, -nd[1] / nd[0], 0, 1 / nd[0],
                                        -nd[2] / nd[0], 0, 0, 1};
  Homography h;
  h.m = multiply(t_dst_inv, multiply(hn, t_src));
  if (std::abs(h.m[8]) < 1e-300) {
    throw GeometryError("DegenerateQuad", "rectification maps the origin to infinity", {});
  }
  const double scale = h.m[8];
  for (auto& v : h.m) v /= scale;
  if (std::abs(h.determinant()) <= 1e-12) {
    throw GeometryError("DegenerateQuad", "rectification homography is not invertible", {});
  }
  return h;
}

Point warp_sample(const Homography& h, Point p) {
  const auto& m = h.m;
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  if (std::abs(w) < 1e-12) {
    throw GeometryError("PointAtInfinity", "point maps to infinity", {});
  }
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

CropSize rectified_size(const Quad& q, int height) {
  auto len = [](Point a, Point b) { return std::hypot(b.x - a.x, b.y - a.y); };
  const double horizontal = (len(q[0], q[1]) + len(q[3], q[2])) / 2;
  const double vertical = (len(q[0], q[3]) + len(q[1], q[2])) / 2;
  const double aspect = vertical > 0 ? horizontal / vertical : 1.0;
  const int width = std::max(1, static_cast<int>(std::lround(height * aspect)));
  return {width, height};
}

}  // namespace rrc::geometry
