#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sslb/errors.hpp"

namespace sslb {

/// 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
};

namespace detail {
inline std::string lower_ext(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return ext;
}

inline void skip_pnm_space(std::istream& is) {
  for (;;) {
    int ch = is.peek();
    if (ch == '#') {
      std::string comment;
      std::getline(is, comment);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      return;
    }
  }
}
}  // namespace detail

/// Binary PGM (P5) or PPM (P6) with maxval ≤ 255.
inline RawImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw DatasetError(path.string() + ": not a binary PGM/PPM");
  std::size_t w = 0, h = 0;
  int maxval = 0;
  detail::skip_pnm_space(in);
  in >> w;
  detail::skip_pnm_space(in);
  in >> h;
  detail::skip_pnm_space(in);
  in >> maxval;
  in.get();
  if (!in || w == 0 || h == 0 || maxval <= 0 || maxval > 255) {
    throw DatasetError(path.string() + ": unsupported PNM header");
  }
  RawImage img;
  img.width = w;
  img.height = h;
  img.channels = magic == "P5" ? 1 : 3;
  img.pixels.resize(w * h * img.channels);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size()))) {
    throw DatasetError(path.string() + ": truncated pixel data");
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
  }
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const RawImage& img) {
  if (img.channels != 1) throw DatasetError("write_pgm: image is not grayscale");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DatasetError("write failed for " + path.string());
}

/// Grayscale PNGs stay single-channel; everything else decodes as RGB.
inline RawImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw DatasetError(path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  RawImage img;
  img.width = image.width;
  img.height = image.height;
  img.channels = color ? 3 : 1;
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DatasetError(path.string() + ": " + msg);
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const RawImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw DatasetError("cannot write " + path.string() + ": " + image.message);
  }
}

inline bool is_supported_image(const std::filesystem::path& p) {
  const auto ext = detail::lower_ext(p);
  return ext == ".png" || ext == ".pgm" || ext == ".ppm";
}

inline RawImage read_image(const std::filesystem::path& path) {
  const auto ext = detail::lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm" || ext == ".ppm") return read_pnm(path);
  throw DatasetError(path.string() + ": unsupported format");
}

/// Bilinear resampling of channel `c` to target×target, values scaled to
/// [0,1]. Pixel centres are aligned (half-pixel convention).
inline std::vector<double> resize_bilinear(const RawImage& img, std::size_t c,
                                           std::size_t target) {
  std::vector<double> out(target * target);
  const double sy = static_cast<double>(img.height) / static_cast<double>(target);
  const double sx = static_cast<double>(img.width) / static_cast<double>(target);
  auto at = [&](std::size_t y, std::size_t x) {
    return img.pixels[(y * img.width + x) * img.channels + c] / 255.0;
  };
  for (std::size_t r = 0; r < target; ++r) {
    const double fy = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t col = 0; col < target; ++col) {
      const double fx = std::clamp((static_cast<double>(col) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = (1.0 - wx) * at(y0, x0) + wx * at(y0, x1);
      const double bottom = (1.0 - wx) * at(y1, x0) + wx * at(y1, x1);
      out[r * target + col] = (1.0 - wy) * top + wy * bottom;
    }
  }
  return out;
}

}  // namespace sslb
