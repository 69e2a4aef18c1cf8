#pragma once

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "icot/error.hpp"

namespace icot {

struct Rgb {
  std::uint8_t r{0};
  std::uint8_t g{0};
  std::uint8_t b{0};

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// 8-bit RGB image, row-major.
class Image {
 public:
  Image() = default;
  Image(std::size_t width, std::size_t height, Rgb fill = {})
      : width_{width}, height_{height}, pixels_(width * height, fill) {
    if (width == 0 || height == 0) {
      throw GeometryError("image dimensions must be positive, got " + std::to_string(width) + "x" +
                          std::to_string(height));
    }
  }

  [[nodiscard]] std::size_t width() const noexcept { return width_; }
  [[nodiscard]] std::size_t height() const noexcept { return height_; }
  [[nodiscard]] std::size_t pixel_count() const noexcept { return pixels_.size(); }

  Rgb& at(std::size_t x, std::size_t y) { return pixels_.at(y * width_ + x); }
  const Rgb& at(std::size_t x, std::size_t y) const { return pixels_.at(y * width_ + x); }

  [[nodiscard]] const std::vector<Rgb>& pixels() const noexcept { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t width_{0};
  std::size_t height_{0};
  std::vector<Rgb> pixels_;
};

// Tiling of an image into square patches, linearized row-major.
struct PatchGrid {
  std::size_t patch_rows{0};
  std::size_t patch_cols{0};
  std::size_t patch_px{0};
  std::size_t image_h{0};
  std::size_t image_w{0};

  static PatchGrid for_image(std::size_t image_w, std::size_t image_h, std::size_t patch_px) {
    if (patch_px == 0) {
      throw GeometryError("patch size must be positive");
    }
    if (image_w % patch_px != 0 || image_h % patch_px != 0) {
      throw GeometryError("image " + std::to_string(image_w) + "x" + std::to_string(image_h) +
                          " (width x height) is not divisible by patch size " +
                          std::to_string(patch_px));
    }
    return PatchGrid{image_h / patch_px, image_w / patch_px, patch_px, image_h, image_w};
  }

  static PatchGrid for_image(const Image& image, std::size_t patch_px) {
    return for_image(image.width(), image.height(), patch_px);
  }

  [[nodiscard]] std::size_t patch_count() const noexcept { return patch_rows * patch_cols; }

  [[nodiscard]] std::size_t linear_index(std::size_t row, std::size_t col) const noexcept {
    return row * patch_cols + col;
  }

  // Patch index containing pixel (x, y).
  [[nodiscard]] std::size_t patch_of_pixel(std::size_t x, std::size_t y) const noexcept {
    return linear_index(y / patch_px, x / patch_px);
  }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

namespace detail {

// Reads the next whitespace-delimited header token, skipping '#' comments.
inline std::string next_pnm_token(std::istream& in) {
  std::string token;
  int ch = 0;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) {
        break;
      }
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

inline std::size_t parse_pnm_number(const std::string& token, const char* what) {
  if (token.empty() || token.size() > 9) {
    throw FormatError(std::string{"PPM: invalid "} + what + " '" + token + "'");
  }
  std::size_t value = 0;
  for (char c : token) {
    if (!std::isdigit(static_cast<unsigned char>(c))) {
      throw FormatError(std::string{"PPM: invalid "} + what + " '" + token + "'");
    }
    value = value * 10 + static_cast<std::size_t>(c - '0');
  }
  return value;
}

}  // namespace detail

// Binary PPM (P6, maxval 255) only.
inline Image read_ppm(std::istream& in) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (in.gcount() != 2) {
    throw FormatError("PPM: file too short to contain a magic number");
  }
  if (magic[0] != 'P' || magic[1] != '6') {
    std::string found;
    for (char c : magic) {
      if (std::isprint(static_cast<unsigned char>(c))) {
        found.push_back(c);
      } else {
        std::ostringstream hex;
        hex << "\\x" << std::hex << (static_cast<unsigned>(c) & 0xFFU);
        found += hex.str();
      }
    }
    throw FormatError("PPM: expected magic 'P6', found '" + found + "'");
  }
  const std::size_t width = detail::parse_pnm_number(detail::next_pnm_token(in), "width");
  const std::size_t height = detail::parse_pnm_number(detail::next_pnm_token(in), "height");
  const std::size_t maxval = detail::parse_pnm_number(detail::next_pnm_token(in), "maxval");
  if (width == 0 || height == 0) {
    throw FormatError("PPM: zero image dimension");
  }
  if (maxval != 255) {
    throw FormatError("PPM: unsupported maxval " + std::to_string(maxval) + " (only 255)");
  }
  // next_pnm_token consumed exactly one whitespace byte after maxval.
  std::vector<char> raw(width * height * 3);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw FormatError("PPM: truncated pixel data, expected " + std::to_string(raw.size()) +
                      " bytes, got " + std::to_string(in.gcount()));
  }
  Image image{width, height};
  for (std::size_t i = 0; i < width * height; ++i) {
    image.at(i % width, i / width) = Rgb{static_cast<std::uint8_t>(raw[3 * i]),
                                         static_cast<std::uint8_t>(raw[3 * i + 1]),
                                         static_cast<std::uint8_t>(raw[3 * i + 2])};
  }
  return image;
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in{path, std::ios::binary};
  if (!in) {
    throw FormatError("PPM: cannot open '" + path.string() + "'");
  }
  return read_ppm(in);
}

inline void write_ppm(std::ostream& out, const Image& image) {
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  for (const Rgb& px : image.pixels()) {
    const char bytes[3] = {static_cast<char>(px.r), static_cast<char>(px.g),
                           static_cast<char>(px.b)};
    out.write(bytes, 3);
  }
}

inline std::string encode_ppm(const Image& image) {
  std::ostringstream out{std::ios::binary};
  write_ppm(out, image);
  return out.str();
}

}  // namespace icot
