#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ccomaml {

/// 8-bit interleaved image.
struct RawImage {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<unsigned char> pixels;  // row-major, channels interleaved
};

/// Extensions the folder loader accepts (lower-case, with dot).
const std::vector<std::string>& supported_image_extensions();

/// Decodes PNG (8/16-bit, gray/RGB, alpha dropped) or binary PGM/PPM.
/// Throws std::runtime_error on unreadable or unsupported files.
RawImage read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& image);

/// Bilinear resize (half-pixel centers) to width×height, keeping channels.
/// `channels` forces gray→RGB replication or RGB→gray averaging.
std::vector<double> resize_to_planar(const RawImage& image, std::size_t width, std::size_t height,
                                     std::size_t channels);

}  // namespace ccomaml
