#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ugdd/tensor.hpp"

namespace ugdd {

/// Row-major binary image; nonzero entries are foreground.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), data(h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t count() const;
  bool empty_foreground() const { return count() == 0; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  bool operator==(const BinaryMask&) const = default;

  /// (1,1,h,w) tensor of 0/1.
  Tensor to_tensor() const;
  /// Foreground where value > threshold; `t` must be (1,1,h,w).
  static BinaryMask from_tensor(const Tensor& t, double threshold = 0.5);
};

}  // namespace ugdd
