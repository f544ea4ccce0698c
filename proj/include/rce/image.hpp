#pragma once

#include <zlib.h>

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "rce/common.hpp"
#include "rce/planar_env.hpp"

namespace rce {

namespace image_detail {

inline void be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(std::uint8_t(v >> (8 * i)));
}

inline void chunk(std::vector<std::uint8_t>& out, const char type[4],
                  std::span<const std::uint8_t> data) {
  be32(out, static_cast<std::uint32_t>(data.size()));
  std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(4 + data.size()));
  be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace image_detail

// Writes an 8-bit grayscale PNG; pixels are row-major, top row first.
inline void write_png_gray(const std::string& path, int width, int height,
                           std::span<const std::uint8_t> pixels) {
  if (width <= 0 || height <= 0)
    throw DimensionError("write_png_gray: size must be positive");
  if (pixels.size() != std::size_t(width) * std::size_t(height))
    throw DimensionError("write_png_gray: pixel count does not match size");

  // Raw scanlines, each prefixed with filter byte 0.
  std::vector<std::uint8_t> raw;
  raw.reserve(std::size_t(height) * (std::size_t(width) + 1));
  for (int r = 0; r < height; ++r) {
    raw.push_back(0);
    const std::uint8_t* row = pixels.data() + std::size_t(r) * width;
    raw.insert(raw.end(), row, row + width);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(bound);
  if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_BEST_COMPRESSION) != Z_OK)
    throw IoError("write_png_gray: compression failed");
  z.resize(bound);

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<std::uint8_t> ihdr;
  image_detail::be32(ihdr, static_cast<std::uint32_t>(width));
  image_detail::be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);  // deflate
  ihdr.push_back(0);  // adaptive filtering
  ihdr.push_back(0);  // no interlace
  image_detail::chunk(png, "IHDR", ihdr);
  image_detail::chunk(png, "IDAT", z);
  image_detail::chunk(png, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(png.data()),
          static_cast<std::streamsize>(png.size()));
  if (!f) throw IoError("write failed: " + path);
}

// Renders an executed trajectory as one horizontal strip of frames taken
// every `stride` steps (plus the final state). The agent is white, the goal
// square mid-gray, frame separators dark gray.
inline void write_trace_strip(const std::string& path, const EnvConfig& env,
                              std::span<const PlanarState> states,
                              PlanarState goal, int stride = 1) {
  if (states.empty()) throw DimensionError("write_trace_strip: empty trace");
  if (stride <= 0) throw DomainError("write_trace_strip: stride must be positive");
  std::vector<std::size_t> picks;
  for (std::size_t i = 0; i < states.size(); i += std::size_t(stride))
    picks.push_back(i);
  if (picks.back() != states.size() - 1) picks.push_back(states.size() - 1);

  int side = env.image_side();
  int width = int(picks.size()) * (side + 1) - 1;
  std::vector<std::uint8_t> img(std::size_t(width) * side, 0);
  std::vector<double> goal_px = render(env, goal);
  for (std::size_t k = 0; k < picks.size(); ++k) {
    std::vector<double> px = render(env, states[picks[k]]);
    int x0 = int(k) * (side + 1);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        std::size_t dst = std::size_t(r) * width + x0 + c;
        std::size_t src = std::size_t(r) * side + c;
        if (px[src] > 0.5)
          img[dst] = 255;
        else if (goal_px[src] > 0.5)
          img[dst] = 128;
      }
    if (k + 1 < picks.size())
      for (int r = 0; r < side; ++r)
        img[std::size_t(r) * width + x0 + side] = 64;
  }
  write_png_gray(path, width, side, img);
}

}  // namespace rce
