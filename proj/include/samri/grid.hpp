#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace samri {

/// Dense row-major 2D array; (y, x) = (row, column).
template <class T>
struct Grid2 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> data;

  Grid2() = default;
  Grid2(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), data(h * w, fill) {}

  T& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  const T& at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::size_t size() const { return data.size(); }

  bool operator==(const Grid2&) const = default;
};

/// Binary mask: 0 background, 1 foreground.
using BinaryMask = Grid2<std::uint8_t>;

inline std::size_t foreground_count(const BinaryMask& m) {
  std::size_t n = 0;
  for (auto v : m.data) n += v != 0;
  return n;
}

/// 8-bit image with three interleaved channels (h * w * 3 bytes).
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * 3 + c]; }
  bool operator==(const RgbImage&) const = default;
};

}  // namespace samri
