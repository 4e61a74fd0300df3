#include "ugdd/mask.hpp"

#include <numeric>

#include "ugdd/errors.hpp"

namespace ugdd {

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (auto v : data) n += v != 0;
  return n;
}

Tensor BinaryMask::to_tensor() const {
  Tensor t(Shape{1, 1, height, width});
  for (std::size_t i = 0; i < data.size(); ++i) t[i] = data[i] ? 1.0 : 0.0;
  return t;
}

BinaryMask BinaryMask::from_tensor(const Tensor& t, double threshold) {
  const Shape s = t.shape();
  if (s.n != 1 || s.c != 1) throw DimensionError("mask tensor must be (1,1,h,w), got " + s.str());
  BinaryMask m(s.h, s.w);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = t[i] > threshold;
  return m;
}

}  // namespace ugdd
