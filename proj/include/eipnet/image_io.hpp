#pragma once

#include <png.h>

#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "eipnet/error.hpp"
#include "eipnet/image.hpp"

namespace eipnet {

enum class ImageFormat { png, ppm };

namespace detail {

inline bool has_png_signature(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), sig, 8) == 0;
}

// Reads one PPM header token, skipping whitespace and '#' comments.
inline long ppm_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  long value = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) {
    value = value * 10 + (bytes[pos] - '0');
    if (value > 1'000'000) throw FormatError("ppm: header value too large at offset " + std::to_string(start));
    ++pos;
  }
  if (pos == start) throw FormatError("ppm: expected a number at offset " + std::to_string(start));
  return value;
}

inline ImageU8 decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("ppm: missing P6 magic at offset 0");
  std::size_t pos = 2;
  const long width = ppm_token(bytes, pos);
  const long height = ppm_token(bytes, pos);
  const long maxval = ppm_token(bytes, pos);
  if (width < 1 || height < 1) throw FormatError("ppm: non-positive dimensions");
  if (maxval != 255) throw FormatError("ppm: unsupported maxval " + std::to_string(maxval) + " (only 255)");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError("ppm: expected whitespace after maxval at offset " + std::to_string(pos));
  }
  ++pos;
  const std::size_t need = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() - pos < need) {
    throw FormatError("ppm: truncated pixel data at offset " + std::to_string(bytes.size()) + " (need " +
                      std::to_string(need) + " bytes from offset " + std::to_string(pos) + ")");
  }
  ImageU8 img(static_cast<int>(height), static_cast<int>(width));
  std::memcpy(img.pixels.data(), bytes.data() + pos, need);
  return img;
}

inline std::vector<std::uint8_t> encode_ppm(const ImageU8& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

// Reads the IHDR fields directly: the simplified libpng API converts
// everything, so bit depth and color type are checked here first.
inline void check_png_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 33 || std::memcmp(bytes.data() + 12, "IHDR", 4) != 0) {
    throw FormatError("png: missing IHDR chunk at offset 12");
  }
  const int depth = bytes[24];
  const int color = bytes[25];
  if (depth != 8) throw FormatError("png: unsupported bit depth " + std::to_string(depth) + " (only 8-bit)");
  if (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_RGB_ALPHA) {
    throw FormatError("png: unsupported color type " + std::to_string(color) + " (only RGB or RGBA)");
  }
}

inline ImageU8 decode_png(std::span<const std::uint8_t> bytes) {
  check_png_header(bytes);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError(std::string("png: ") + image.message);
  }
  // Reading straight to RGB would composite alpha over a background, so
  // read RGBA and discard the fourth byte instead.
  image.format = PNG_FORMAT_RGBA;
  ImageU8 img(static_cast<int>(image.height), static_cast<int>(image.width));
  std::vector<std::uint8_t> rgba(static_cast<std::size_t>(img.height) * img.width * 4);
  if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("png: " + msg);
  }
  for (std::size_t i = 0, n = rgba.size() / 4; i < n; ++i)
    for (int c = 0; c < 3; ++c) img.pixels[i * 3 + c] = rgba[i * 4 + c];
  return img;
}

inline std::vector<std::uint8_t> encode_png(const ImageU8& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("png: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("png: ") + image.message);
  }
  out.resize(size);
  return out;
}

}  // namespace detail

/// Decodes PNG (8-bit RGB/RGBA, alpha dropped) or binary PPM (P6, maxval 255).
inline ImageU8 decode(std::span<const std::uint8_t> bytes) {
  if (detail::has_png_signature(bytes)) return detail::decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return detail::decode_ppm(bytes);
  throw FormatError("unrecognized image format at offset 0");
}

inline std::vector<std::uint8_t> encode(const ImageU8& img, ImageFormat format) {
  return format == ImageFormat::png ? detail::encode_png(img) : detail::encode_ppm(img);
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

inline ImageU8 read_image(const std::filesystem::path& path) {
  try {
    return decode(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Format chosen from the extension: .ppm writes P6, anything else PNG.
inline void write_image(const std::filesystem::path& path, const ImageU8& img) {
  const auto format = path.extension() == ".ppm" ? ImageFormat::ppm : ImageFormat::png;
  write_bytes(path, encode(img, format));
}

}  // namespace eipnet
