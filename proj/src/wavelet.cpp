#include "ugdd/wavelet.hpp"

#include "ugdd/errors.hpp"

namespace ugdd::wavelet {

namespace {

std::size_t reflect_index(std::size_t i, std::size_t n) {
  if (i < n) return i;
  return n >= 2 ? n - 2 : n - 1;
}

}  // namespace

SubbandSet dwt2(const Tensor& x) {
  const Shape s = x.shape();
  if (s.size() == 0) throw DimensionError("dwt2: empty tensor");
  const std::size_t H = s.h + s.h % 2, W = s.w + s.w % 2;
  const Shape half{s.n, s.c, H / 2, W / 2};
  SubbandSet out{Tensor(half), Tensor(half), Tensor(half), Tensor(half), s.h, s.w};
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < half.h; ++i)
        for (std::size_t j = 0; j < half.w; ++j) {
          const std::size_t y0 = reflect_index(2 * i, s.h), y1 = reflect_index(2 * i + 1, s.h);
          const std::size_t x0 = reflect_index(2 * j, s.w), x1 = reflect_index(2 * j + 1, s.w);
          const double a = x.at(n, c, y0, x0), b = x.at(n, c, y0, x1);
          const double cc = x.at(n, c, y1, x0), d = x.at(n, c, y1, x1);
          out.ll.at(n, c, i, j) = 0.5 * (a + b + cc + d);
          out.lh.at(n, c, i, j) = 0.5 * (a + b - cc - d);
          out.hl.at(n, c, i, j) = 0.5 * (a - b + cc - d);
          out.hh.at(n, c, i, j) = 0.5 * (a - b - cc + d);
        }
  return out;
}

Tensor idwt2(const SubbandSet& s) {
  const Shape half = s.ll.shape();
  if (!(s.lh.shape() == half) || !(s.hl.shape() == half) || !(s.hh.shape() == half)) {
    throw DimensionError("idwt2: subband shapes differ");
  }
  const std::size_t H = s.height ? s.height : 2 * half.h;
  const std::size_t W = s.width ? s.width : 2 * half.w;
  if (H > 2 * half.h || W > 2 * half.w || H + 1 < 2 * half.h || W + 1 < 2 * half.w) {
    throw DimensionError("idwt2: recorded size inconsistent with subbands");
  }
  Tensor out(Shape{half.n, half.c, H, W});
  for (std::size_t n = 0; n < half.n; ++n)
    for (std::size_t c = 0; c < half.c; ++c)
      for (std::size_t i = 0; i < half.h; ++i)
        for (std::size_t j = 0; j < half.w; ++j) {
          const double ll = s.ll.at(n, c, i, j), lh = s.lh.at(n, c, i, j);
          const double hl = s.hl.at(n, c, i, j), hh = s.hh.at(n, c, i, j);
          const double block[2][2] = {{0.5 * (ll + lh + hl + hh), 0.5 * (ll + lh - hl - hh)},
                                      {0.5 * (ll - lh + hl - hh), 0.5 * (ll - lh - hl + hh)}};
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t y = 2 * i + dy, x = 2 * j + dx;
              if (y < H && x < W) out.at(n, c, y, x) = block[dy][dx];
            }
        }
  return out;
}

Tensor highfreq_reconstruct(const Tensor& x) {
  SubbandSet s = dwt2(x);
  s.ll.fill(0.0);
  return idwt2(s);
}

Tensor lowfreq_reconstruct(const Tensor& x) {
  SubbandSet s = dwt2(x);
  s.lh.fill(0.0);
  s.hl.fill(0.0);
  s.hh.fill(0.0);
  return idwt2(s);
}

double energy(const Tensor& t) {
  double e = 0.0;
  for (double v : t.storage()) e += v * v;
  return e;
}

double energy(const SubbandSet& s) { return energy(s.ll) + energy(s.lh) + energy(s.hl) + energy(s.hh); }

}  // namespace ugdd::wavelet
