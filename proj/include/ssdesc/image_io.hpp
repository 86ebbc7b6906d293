#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <png.h>

#include "ssdesc/error.hpp"
#include "ssdesc/image.hpp"

namespace ssdesc {

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline float luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double y = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
  return static_cast<float>(std::min(1.0, y));
}

inline GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
      if (v > (1L << 30)) throw FormatError("PGM header value overflow in '" + path + "'");
    }
    if (!any) throw FormatError("malformed PGM header in '" + path + "'");
    return v;
  };
  const long w = next_token(), h = next_token(), maxval = next_token();
  if (w <= 0 || h <= 0) throw FormatError("PGM has empty extents: '" + path + "'");
  if (maxval < 1 || maxval > 255) {
    throw FormatError("unsupported PGM bit depth (maxval " + std::to_string(maxval) + ") in '" + path + "'");
  }
  ++pos;  // single whitespace before raster
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() < pos + n) throw FormatError("PGM raster truncated in '" + path + "'");
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = static_cast<float>(static_cast<double>(bytes[pos + i]) / maxval);
  }
  return GrayImage(static_cast<int>(w), static_cast<int>(h), std::move(data));
}

inline GrayImage decode_png(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError("cannot decode PNG '" + path + "': " + image.message);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw FormatError("unsupported PNG bit depth (16-bit) in '" + path + "'");
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.data(), 0, nullptr)) {
    throw FormatError("cannot decode PNG '" + path + "': " + image.message);
  }
  const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
  std::vector<float> data(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint8_t* px = &raster[i * channels];
    data[i] = color ? luma(px[0], px[1], px[2]) : dequantize_u8(px[0]);
  }
  return GrayImage(w, h, std::move(data));
}

}  // namespace detail

/// Loads an 8-bit PNG (gray, RGB, palette; alpha ignored) or binary PGM (P5).
/// Color is reduced with luma weights 0.299, 0.587, 0.114.
inline GrayImage load_image(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return detail::decode_png(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return detail::decode_pgm(bytes, path);
  throw FormatError("unsupported image format in '" + path + "' (expected PNG or P5 PGM)");
}

inline std::vector<std::uint8_t> quantize(const GrayImage& img) {
  std::vector<std::uint8_t> out(img.size());
  const auto px = img.pixels();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantize_u8(px[i]);
  return out;
}

inline void save_pgm(const GrayImage& img, const std::string& path) {
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const auto raster = quantize(img);
  bytes.insert(bytes.end(), raster.begin(), raster.end());
  detail::write_file_bytes(path, bytes);
}

inline void save_png(const GrayImage& img, const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;
  const auto raster = quantize(img);
  if (!png_image_write_to_file(&image, path.c_str(), 0, raster.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path + "': " + image.message);
  }
}

/// Writes PGM for a .pgm extension, PNG otherwise.
inline void save_image(const GrayImage& img, const std::string& path) {
  const auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == "pgm") {
    save_pgm(img, path);
  } else {
    save_png(img, path);
  }
}

}  // namespace ssdesc
