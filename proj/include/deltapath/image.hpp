#pragma once

// RGB float images and the PFM ("PF" colour / "Pf" grey) file format.
// Writers always emit little-endian colour PFM (scale -1.0), bottom row first.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "deltapath/errors.hpp"
#include "deltapath/math.hpp"

namespace deltapath {

class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = Rgb{})
      : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  Rgb& at(int x, int y) { return pixels_[index(x, y)]; }
  const Rgb& at(int x, int y) const { return pixels_[index(x, y)]; }
  Rgb& operator[](std::size_t i) { return pixels_[i]; }
  const Rgb& operator[](std::size_t i) const { return pixels_[i]; }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  std::vector<Rgb>& pixels() { return pixels_; }
  const std::vector<Rgb>& pixels() const { return pixels_; }

  bool same_size(const Image& o) const { return width_ == o.width_ && height_ == o.height_; }

  Rgb mean() const {
    Rgb sum;
    for (const Rgb& p : pixels_) sum += p;
    return pixels_.empty() ? sum : sum / static_cast<double>(pixels_.size());
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Rgb> pixels_;
};

namespace pfm_detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

inline void append_float_le(std::string& out, float f) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  if constexpr (std::endian::native == std::endian::big) bits = byteswap32(bits);
  char bytes[4];
  std::memcpy(bytes, &bits, 4);
  out.append(bytes, 4);
}

inline float read_float(const char* p, bool little_endian) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  const bool native_little = std::endian::native == std::endian::little;
  if (little_endian != native_little) bits = byteswap32(bits);
  return std::bit_cast<float>(bits);
}

}  // namespace pfm_detail

/// Serialises to the exact bytes of a PFM file. Pure function of the pixel values.
inline std::string encode_pfm(const Image& image) {
  std::string out = "PF\n" + std::to_string(image.width()) + " " +
                    std::to_string(image.height()) + "\n-1.0\n";
  out.reserve(out.size() + image.size() * 12);
  for (int y = image.height() - 1; y >= 0; --y) {
    for (int x = 0; x < image.width(); ++x) {
      const Rgb& c = image.at(x, y);
      pfm_detail::append_float_le(out, static_cast<float>(c.r));
      pfm_detail::append_float_le(out, static_cast<float>(c.g));
      pfm_detail::append_float_le(out, static_cast<float>(c.b));
    }
  }
  return out;
}

inline Image decode_pfm(const std::string& bytes) {
  std::istringstream header(bytes);
  std::string magic;
  int width = 0, height = 0;
  double scale = 0.0;
  header >> magic >> width >> height >> scale;
  if (!header || (magic != "PF" && magic != "Pf") || width <= 0 || height <= 0 || scale == 0.0) {
    throw IoError("malformed PFM header");
  }
  // Exactly one whitespace byte separates the scale from the raster.
  const auto data_offset = static_cast<std::size_t>(header.tellg()) + 1;
  const int channels = magic == "PF" ? 3 : 1;
  const std::size_t expected = static_cast<std::size_t>(width) * height * channels * 4;
  if (bytes.size() < data_offset + expected) throw IoError("truncated PFM raster");

  const bool little = scale < 0.0;
  const double gain = std::abs(scale);
  Image image(width, height);
  const char* p = bytes.data() + data_offset;
  for (int y = height - 1; y >= 0; --y) {
    for (int x = 0; x < width; ++x) {
      Rgb c;
      if (channels == 3) {
        c.r = pfm_detail::read_float(p, little);
        c.g = pfm_detail::read_float(p + 4, little);
        c.b = pfm_detail::read_float(p + 8, little);
      } else {
        c = Rgb(pfm_detail::read_float(p, little));
      }
      p += 4 * channels;
      // The magnitude of the scale is a gain factor in some writers; 1.0 is the norm.
      image.at(x, y) = gain == 1.0 ? c : c * gain;
    }
  }
  return image;
}

inline Image read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open PFM file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return decode_pfm(buffer.str());
}

inline void write_pfm(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write PFM file '" + path + "'");
  const std::string bytes = encode_pfm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing PFM file '" + path + "'");
}

/// Single-channel helper: writes scalar data replicated to RGB.
inline Image scalar_image(int width, int height, const std::vector<double>& values) {
  Image image(width, height);
  for (std::size_t i = 0; i < image.size() && i < values.size(); ++i) image[i] = Rgb(values[i]);
  return image;
}

/// Output transform: clamps negatives to zero. Only applied when writing final images.
inline Image clamp_negative(Image image) {
  for (Rgb& c : image.pixels()) {
    c = Rgb{std::max(c.r, 0.0), std::max(c.g, 0.0), std::max(c.b, 0.0)};
  }
  return image;
}

}  // namespace deltapath
