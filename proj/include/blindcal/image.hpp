#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "blindcal/errors.hpp"
#include "blindcal/model.hpp"

namespace blindcal {

/// Channel-separated image with values in [0, 1]; each plane is row-major
/// (width * height) so it can be used directly as a signal vector.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<Vector> planes;

  int channels() const noexcept { return static_cast<int>(planes.size()); }
  Index pixels() const noexcept { return static_cast<Index>(width) * height; }
};

namespace detail {

inline int read_header_int(const std::string& bytes, std::size_t& pos) {
  // Whitespace and '#' comments may separate header fields.
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
    throw FormatError("netpbm header: expected an integer");
  long v = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    v = v * 10 + (bytes[pos] - '0');
    if (v > 1 << 24) throw FormatError("netpbm header: value too large");
    ++pos;
  }
  return static_cast<int>(v);
}

inline unsigned char quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace detail

/// Decodes binary P5 (grey) or P6 (RGB) data with maxval 255.
inline Image decode_netpbm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError("unsupported netpbm magic (expected P5 or P6)");
  const int channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const int width = detail::read_header_int(bytes, pos);
  const int height = detail::read_header_int(bytes, pos);
  const int maxval = detail::read_header_int(bytes, pos);
  if (width <= 0 || height <= 0) throw FormatError("netpbm image has zero size");
  if (maxval != 255) throw FormatError("unsupported netpbm maxval " + std::to_string(maxval) + " (only 255)");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError("netpbm header not terminated by whitespace");
  ++pos;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  if (bytes.size() - pos < count) throw FormatError("netpbm pixel data truncated");

  Image img;
  img.width = width;
  img.height = height;
  img.planes.assign(static_cast<std::size_t>(channels), Vector(img.pixels()));
  for (Index k = 0; k < img.pixels(); ++k)
    for (int c = 0; c < channels; ++c)
      img.planes[static_cast<std::size_t>(c)][k] =
          static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(k * channels + c)]) / 255.0;
  return img;
}

/// P5 for one channel, P6 for three; values are clamped to [0, 1] and rounded to 8 bits.
inline std::string encode_netpbm(const Image& img) {
  const int channels = img.channels();
  if (channels != 1 && channels != 3) throw FormatError("netpbm output needs 1 or 3 channels");
  if (img.width <= 0 || img.height <= 0) throw FormatError("cannot encode an empty image");
  for (const auto& plane : img.planes)
    if (plane.size() != img.pixels()) throw DimensionError("image plane size does not match width * height");
  std::string out = (channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(img.pixels() * channels));
  for (Index k = 0; k < img.pixels(); ++k)
    for (int c = 0; c < channels; ++c)
      out.push_back(static_cast<char>(detail::quantize(img.planes[static_cast<std::size_t>(c)][k])));
  return out;
}

inline Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_netpbm(bytes);
}

inline void write_image(const std::string& path, const Image& img) {
  const std::string bytes = encode_netpbm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// Mean of the channels, for grey-scale demos from colour input.
inline Image to_grayscale(const Image& img) {
  Image out;
  out.width = img.width;
  out.height = img.height;
  Vector sum = Vector::Zero(img.pixels());
  for (const auto& plane : img.planes) sum += plane;
  out.planes.push_back(sum / static_cast<double>(std::max(1, img.channels())));
  return out;
}

}  // namespace blindcal
