#pragma once

#include <cstdint>
#include <vector>

namespace coseg {

// Binary segmentation mask, row-major, values 0 or 1.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  static Mask zeros(int height, int width) {
    Mask m;
    m.height = height;
    m.width = width;
    m.values.assign(static_cast<std::size_t>(height) * width, 0);
    return m;
  }

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

  std::int64_t foreground_count() const {
    std::int64_t n = 0;
    for (std::uint8_t v : values) n += v;
    return n;
  }

  bool operator==(const Mask& other) const = default;
};

}  // namespace coseg
