#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "rrc/error.hpp"

/// Planar geometry for quadrilateral ground truth and detections.
///
/// All coordinates are image pixels (x right, y down) in double precision.
/// Every function here is pure and thread-safe.
namespace rrc::geometry {

/// Absolute tolerance at pixel scale.
inline constexpr double kEpsilon = 1e-9;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Rejection reasons for raw corner lists. Each error names the offending
/// vertex indices of the *input* order.
class GeometryError : public Error {
 public:
  GeometryError(std::string code, const std::string& message, std::vector<int> vertices)
      : Error(std::move(code), message), vertices_(std::move(vertices)) {}

  const std::vector<int>& vertices() const noexcept { return vertices_; }

 private:
  std::vector<int> vertices_;
};

/// A convex, simple quadrilateral with positive area, stored in canonical
/// order: the corner minimising x+y first (ties: smaller y), then clockwise
/// as seen on screen. Only `canonicalize_quad` and `axis_rect` construct one.
class Quad {
 public:
  const std::array<Point, 4>& corners() const noexcept { return corners_; }
  const Point& operator[](std::size_t i) const noexcept { return corners_[i]; }

  /// x1,y1,...,x4,y4 in canonical order.
  std::array<double, 8> flat() const noexcept;

  friend bool operator==(const Quad&, const Quad&) = default;
  friend auto operator<=>(const Quad& a, const Quad& b) noexcept {
    return a.flat() <=> b.flat();
  }

 private:
  explicit Quad(const std::array<Point, 4>& c) : corners_(c) {}
  friend Quad canonicalize_quad(const std::array<Point, 4>& raw);

  std::array<Point, 4> corners_;
};

/// Validates and reorders four corners. Throws GeometryError with code
/// NonFinite, SelfIntersecting, ZeroArea or NonConvex.
Quad canonicalize_quad(const std::array<Point, 4>& raw);

/// `raw` must hold exactly 8 values laid out x1,y1,...,x4,y4.
Quad canonicalize_quad(std::span<const double> raw);

/// Axis-aligned rectangle sugar; corners may be given in any diagonal order.
Quad axis_rect(double x0, double y0, double x1, double y1);

/// Convex polygon produced by clipping. Empty means zero vertices.
struct ConvexPolygon {
  std::vector<Point> vertices;

  bool empty() const noexcept { return vertices.empty(); }
};

double area(const Quad& q);
double area(const ConvexPolygon& p);

/// Sutherland-Hodgman clip of `a` against the four half-planes of `b`.
ConvexPolygon intersect(const Quad& a, const Quad& b);

/// area(intersect(a, b)), evaluated in an argument order that makes the
/// result bit-identical for (a, b) and (b, a).
double intersection_area(const Quad& a, const Quad& b);

/// Intersection over union in [0, 1]. iou(a, b) == iou(b, a) exactly.
double iou(const Quad& a, const Quad& b);

/// Projective 3x3 map, row-major, normalised so m[8] == 1.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }
  double determinant() const noexcept;
  Homography inverse() const;
};

/// Maps corner i of `q` onto (0,0), (w,0), (w,h), (0,h) by solving the
/// 8-unknown direct linear system. Throws GeometryError("DegenerateQuad")
/// when the system is singular or the result is not invertible.
Homography rectification_homography(const Quad& q, double out_w, double out_h);

/// Applies `h` with the homogeneous divide. Throws
/// GeometryError("PointAtInfinity") when |w| < 1e-12.
Point warp_sample(const Homography& h, Point p);

/// Output size of a rectified crop at a fixed height; width follows the
/// quad's mean horizontal / mean vertical edge ratio.
struct CropSize {
  int width;
  int height;
};
CropSize rectified_size(const Quad& q, int height = 64);

}  // namespace rrc::geometry
