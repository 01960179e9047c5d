#pragma once

// Binary (P5) PGM reading and writing. 16-bit samples are big-endian.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "idol/error.hpp"
#include "idol/tensor.hpp"

namespace idol {

inline constexpr double kPgmScale = 65535.0;

/// Writes raw 16-bit gray levels.
inline void write_pgm16(const std::filesystem::path& path, std::size_t height, std::size_t width,
                        const std::vector<std::uint16_t>& levels) {
  require(levels.size() == height * width, "write_pgm16: level count does not match image size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << width << ' ' << height << "\n65535\n";
  std::vector<char> bytes(levels.size() * 2);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    bytes[2 * i] = static_cast<char>(levels[i] >> 8);
    bytes[2 * i + 1] = static_cast<char>(levels[i] & 0xff);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

/// Writes an [H, W] image with values in [0, 1] as round(v * 65535).
inline void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  require(image.rank() == 2, "write_pgm: expected a 2-D image");
  std::vector<std::uint16_t> levels(image.size());
  for (std::size_t i = 0; i < image.size(); ++i)
    levels[i] = static_cast<std::uint16_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * kPgmScale));
  write_pgm16(path, image.dim(0), image.dim(1), levels);
}

/// Reads a P5 file (8- or 16-bit) into [H, W] with values level / maxval.
inline Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto token = [&]() {
    std::string t;
    while (in >> std::ws && in.peek() == '#') std::getline(in, t);
    in >> t;
    return t;
  };
  if (token() != "P5") throw IoError(path.string() + ": not a binary PGM");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(token());
    height = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) throw IoError(path.string() + ": bad PGM header");
  in.get();  // single whitespace before raster
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(width * height * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw IoError(path.string() + ": truncated PGM raster");
  Tensor img({height, width});
  for (std::size_t i = 0; i < width * height; ++i) {
    const std::size_t level = bytes_per == 2 ? (std::size_t{raw[2 * i]} << 8 | raw[2 * i + 1]) : raw[i];
    img[i] = static_cast<double>(level) / static_cast<double>(maxval);
  }
  return img;
}

}  // namespace idol
