#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rrc::image {

enum class Format { Png, Jpeg };

/// 8-bit RGB raster, row-major.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

/// Sniffs the magic bytes; throws rrc::Error("UndecodableImage") otherwise.
Format sniff(std::string_view bytes);

std::string_view extension(Format f);

/// Fully decodes the image. Truncated or corrupt data is rejected with
/// rrc::Error("UndecodableImage") rather than partially decoded.
Raster decode(std::string_view bytes);

std::string encode_png(const Raster& r);
std::string encode_jpeg(const Raster& r, int quality = 90);

}  // namespace rrc::image
