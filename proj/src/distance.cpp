#include "ugdd/distance.hpp"

#include <limits>

#include "ugdd/errors.hpp"

namespace ugdd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance of a sampled function f (Felzenszwalb & Huttenlocher).
void transform_1d(const double* f, std::size_t n, std::size_t stride, double* out) {
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (f[q * stride] < kInf) {
      first = q;
      break;
    }
  if (first == n) {
    for (std::size_t q = 0; q < n; ++q) out[q * stride] = kInf;
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (!(f[q * stride] < kInf)) continue;
    const double fq = f[q * stride] + static_cast<double>(q * q);
    double s;
    while (true) {
      const std::size_t p = v[k];
      s = (fq - (f[p * stride] + static_cast<double>(p * p))) / (2.0 * (static_cast<double>(q) - static_cast<double>(p)));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q * stride] = d * d + f[v[k] * stride];
  }
}

}  // namespace

std::vector<double> squared_distance_transform(std::span<const std::uint8_t> sites, std::size_t h, std::size_t w) {
  if (sites.size() != h * w) throw DimensionError("distance transform: mask size does not match grid");
  std::vector<double> f(h * w), tmp(h * w), out(h * w);
  for (std::size_t i = 0; i < h * w; ++i) f[i] = sites[i] ? 0.0 : kInf;
  for (std::size_t x = 0; x < w; ++x) transform_1d(f.data() + x, h, w, tmp.data() + x);
  for (std::size_t y = 0; y < h; ++y) transform_1d(tmp.data() + y * w, w, 1, out.data() + y * w);
  return out;
}

}  // namespace ugdd
