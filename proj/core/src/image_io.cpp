#include "ccomaml/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace ccomaml {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

RawImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw std::runtime_error("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  RawImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  const auto stride = png_get_rowbytes(png, info);
  img.pixels.resize(stride * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (img.channels != 1 && img.channels != 3) throw std::runtime_error("unsupported PNG layout: " + path.string());
  return img;
}

// Binary netpbm (P5 gray, P6 RGB), maxval ≤ 255.
RawImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw std::runtime_error("unsupported netpbm variant in " + path.string());
  auto next_int = [&]() {
    int c = in.peek();
    while (in && (std::isspace(c) || c == '#')) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else {
        in.get();
      }
      c = in.peek();
    }
    long v = -1;
    in >> v;
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw std::runtime_error("bad netpbm header in " + path.string());
  in.get();
  RawImage img;
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(h);
  img.channels = magic == "P6" ? 3 : 1;
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error("truncated netpbm data in " + path.string());
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<unsigned char>(std::lround(p * 255.0 / static_cast<double>(maxval)));
  }
  return img;
}

std::string lower_ext(const std::filesystem::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

}  // namespace

const std::vector<std::string>& supported_image_extensions() {
  static const std::vector<std::string> exts{".png", ".pgm", ".ppm"};
  return exts;
}

RawImage read_image(const std::filesystem::path& path) {
  const auto ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm" || ext == ".ppm") return read_pnm(path);
  throw std::runtime_error("unsupported image extension: " + path.string());
}

void write_png(const std::filesystem::path& path, const RawImage& image) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = image.width * image.channels;
  for (std::size_t y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<double> resize_to_planar(const RawImage& image, std::size_t width, std::size_t height,
                                     std::size_t channels) {
  const std::size_t src_c = image.channels;
  auto sample = [&](std::size_t x, std::size_t y, std::size_t c) {
    return image.pixels[(y * image.width + x) * src_c + c] / 255.0;
  };
  auto channel_value = [&](std::size_t x, std::size_t y, std::size_t c) {
    if (src_c == channels) return sample(x, y, c);
    if (src_c == 1) return sample(x, y, 0);
    double s = 0.0;
    for (std::size_t k = 0; k < src_c; ++k) s += sample(x, y, k);
    return s / static_cast<double>(src_c);
  };
  std::vector<double> out(channels * height * width);
  const bool same = width == image.width && height == image.height;
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double v;
        if (same) {
          v = channel_value(x, y, c);
        } else {
          const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, double(image.width - 1));
          const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, double(image.height - 1));
          const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
          const std::size_t x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
          const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
          v = (1 - ay) * ((1 - ax) * channel_value(x0, y0, c) + ax * channel_value(x1, y0, c)) +
              ay * ((1 - ax) * channel_value(x0, y1, c) + ax * channel_value(x1, y1, c));
        }
        out[(c * height + y) * width + x] = v;
      }
    }
  }
  return out;
}

}  // namespace ccomaml
