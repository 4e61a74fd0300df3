#include "ugdd/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ugdd/errors.hpp"

namespace ugdd::io {

Image8 read_png(const std::string& path, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ContractError("read_png: channels must be 1 or 3");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IngestionError("cannot read PNG '" + path + "': " + image.message);
  }
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out;
  out.height = image.height;
  out.width = image.width;
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IngestionError("cannot decode PNG '" + path + "': " + msg);
  }
  return out;
}

void write_png(const std::string& path, const Image8& img) {
  if (img.pixels.size() != img.height * img.width * img.channels) throw DimensionError("write_png: pixel buffer size mismatch");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw IngestionError("cannot write PNG '" + path + "': " + image.message);
  }
}

Image8 to_image8(const Tensor& t) {
  const Shape s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) throw DimensionError("to_image8 expects (1,1|3,H,W), got " + s.str());
  Image8 img{s.h, s.w, s.c, std::vector<std::uint8_t>(s.h * s.w * s.c)};
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < s.c; ++c) {
        const double v = std::clamp(t.at(0, c, y, x), 0.0, 1.0);
        img.pixels[(y * s.w + x) * s.c + c] = static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
  return img;
}

Tensor from_image8(const Image8& img) {
  Tensor t(Shape{1, img.channels, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        t.at(0, c, y, x) = img.pixels[(y * img.width + x) * img.channels + c] / 255.0;
  return t;
}

Image8 mask_to_image8(const BinaryMask& m) {
  Image8 img{m.height, m.width, 1, std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) img.pixels[i] = m.data[i] ? 255 : 0;
  return img;
}

Tensor resize_bilinear(const Tensor& t, std::size_t h, std::size_t w) {
  const Shape s = t.shape();
  if (s.h == h && s.w == w) return t;
  Tensor out(Shape{s.n, s.c, h, w});
  auto coord = [](std::size_t i, std::size_t from, std::size_t to, std::size_t& i0, std::size_t& i1, double& f) {
    double src = (static_cast<double>(i) + 0.5) * static_cast<double>(from) / static_cast<double>(to) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(from - 1));
    i0 = static_cast<std::size_t>(std::floor(src));
    i1 = std::min(i0 + 1, from - 1);
    f = src - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < h; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, s.h, h, y0, y1, fy);
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, s.w, w, x0, x1, fx);
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
          const double top = (1 - fx) * t.at(n, c, y0, x0) + fx * t.at(n, c, y0, x1);
          const double bot = (1 - fx) * t.at(n, c, y1, x0) + fx * t.at(n, c, y1, x1);
          out.at(n, c, y, x) = (1 - fy) * top + fy * bot;
        }
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& m, std::size_t h, std::size_t w) {
  if (m.height == h && m.width == w) return m;
  BinaryMask out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = std::min(m.height - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) * m.height / h));
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = std::min(m.width - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) * m.width / w));
      out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

synth::Sample load_pair(const std::string& image_path, const std::string& mask_path, std::size_t size,
                        std::size_t channels) {
  const Image8 img = read_png(image_path, channels);
  const Image8 raw = read_png(mask_path, 1);
  if (img.height != raw.height || img.width != raw.width) {
    throw IngestionError("image '" + image_path + "' and mask '" + mask_path + "' differ in size");
  }
  std::size_t ambiguous = 0;
  BinaryMask mask(raw.height, raw.width);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
    const int v = raw.pixels[i];
    ambiguous += v > kMaskLow && v < kMaskHigh;
    mask.data[i] = v >= kMaskThreshold;
  }
  if (static_cast<double>(ambiguous) > kMaxAmbiguous * static_cast<double>(raw.pixels.size())) {
    throw IngestionError("mask '" + mask_path + "' is not binary (" + std::to_string(ambiguous) + " mid-grey pixels)");
  }
  synth::Sample s;
  s.image = resize_bilinear(from_image8(img), size, size);
  s.mask = resize_nearest(mask, size, size);
  return s;
}

}  // namespace ugdd::io
