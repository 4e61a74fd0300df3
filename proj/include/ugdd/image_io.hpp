#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ugdd/mask.hpp"
#include "ugdd/synth.hpp"
#include "ugdd/tensor.hpp"

namespace ugdd::io {

/// Interleaved 8-bit pixels, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
};

/// Reads any PNG libpng understands, converted to gray or RGB. Throws IngestionError.
Image8 read_png(const std::string& path, std::size_t channels);
void write_png(const std::string& path, const Image8& img);

/// (1,C,H,W) in [0,1] <-> 8 bit with round-to-nearest.
Image8 to_image8(const Tensor& t);
Tensor from_image8(const Image8& img);
Image8 mask_to_image8(const BinaryMask& m);

/// Half-pixel-centre bilinear resampling of every channel.
Tensor resize_bilinear(const Tensor& t, std::size_t h, std::size_t w);
BinaryMask resize_nearest(const BinaryMask& m, std::size_t h, std::size_t w);

/// Mask pixels outside [kMaskLow, kMaskHigh] count as clean; a mask where
/// more than kMaxAmbiguous of the pixels are mid-grey is rejected.
inline constexpr int kMaskLow = 16;
inline constexpr int kMaskHigh = 239;
inline constexpr double kMaxAmbiguous = 0.05;
inline constexpr int kMaskThreshold = 128;

/// Image scaled to [0,1], mask foreground at >= 128, both resized to size x size.
synth::Sample load_pair(const std::string& image_path, const std::string& mask_path, std::size_t size,
                        std::size_t channels);

}  // namespace ugdd::io
