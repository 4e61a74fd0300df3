#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ugdd {

/// Exact squared Euclidean distance from every pixel of an h x w grid to the
/// nearest pixel with `sites[i] != 0` (separable lower-envelope transform).
/// Pixels are infinitely far when there are no sites.
std::vector<double> squared_distance_transform(std::span<const std::uint8_t> sites, std::size_t h, std::size_t w);

}  // namespace ugdd
