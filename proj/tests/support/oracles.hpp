#pragma once

// Independent reference implementations. None of these call into the code
// they check, except for reading quad corners.

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

#include "rrc/geometry.hpp"

namespace rrc::test::oracle {

/// Point-in-polygon counting on the grid of cell centres ((i+1/2)*step,
/// (j+1/2)*step). Each row's crossing interval is computed once and its
/// grid points counted, so the cost is per row rather than per point.
double raster_area(const geometry::Quad& q, double step = 0.05);
double raster_iou(const geometry::Quad& a, const geometry::Quad& b, double step = 0.05);

/// Maximum-cardinality bipartite matching by exhaustive search.
/// adj[g][d] is true when the pair is admissible.
std::size_t max_matching(const std::vector<std::vector<bool>>& adj);

/// Full-matrix edit distance over UTF-32 code units (no shortcuts).
std::size_t edit_distance(std::u32string_view a, std::u32string_view b);

/// Decodes well-formed UTF-8 only; used on test strings we build ourselves.
std::u32string utf8_to_u32(std::string_view s);

/// The 3x3 homography mapping src[i] to dst[i], solved as a dense 8x8
/// system with Eigen's full-pivot LU.
std::array<double, 9> solve_homography(const std::array<geometry::Point, 4>& src,
                                       const std::array<geometry::Point, 4>& dst);

geometry::Point apply(const std::array<double, 9>& h, geometry::Point p);

}  // namespace rrc::test::oracle
