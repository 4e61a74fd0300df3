#include "ugdd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ugdd/errors.hpp"

namespace ugdd {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_.str());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max() const {
  if (data_.empty()) throw DimensionError("max() of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

double Tensor::min() const {
  if (data_.empty()) throw DimensionError("min() of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

Tensor Tensor::reshaped(Shape s) const {
  if (s.size() != shape_.size()) {
    throw DimensionError("cannot reshape " + shape_.str() + " to " + s.str());
  }
  return Tensor(s, data_);
}

Tensor Tensor::sample(std::size_t n) const {
  if (n >= shape_.n) throw DimensionError("batch index out of range");
  const std::size_t stride = shape_.c * shape_.h * shape_.w;
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(n * stride),
                          data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * stride));
  return Tensor(Shape{1, shape_.c, shape_.h, shape_.w}, std::move(out));
}

Tensor Tensor::channels(std::size_t c0, std::size_t count) const {
  if (c0 + count > shape_.c) throw DimensionError("channel range out of bounds");
  Tensor out(Shape{shape_.n, count, shape_.h, shape_.w});
  const std::size_t plane = shape_.h * shape_.w;
  for (std::size_t n = 0; n < shape_.n; ++n) {
    for (std::size_t c = 0; c < count; ++c) {
      const double* src = data_.data() + offset(n, c0 + c, 0, 0);
      std::copy(src, src + plane, out.data_.data() + out.offset(n, c, 0, 0));
    }
  }
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
  if (!(o.shape_ == shape_)) throw DimensionError("+= shape mismatch " + shape_.str() + " vs " + o.shape_.str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw DimensionError("stack_batch of nothing");
  const Shape s = items.front().shape();
  Tensor out(Shape{items.size(), s.c, s.h, s.w});
  std::size_t pos = 0;
  for (const auto& t : items) {
    if (t.shape().n != 1 || t.shape().c != s.c || t.shape().h != s.h || t.shape().w != s.w) {
      throw DimensionError("stack_batch shape mismatch");
    }
    std::copy(t.storage().begin(), t.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(pos));
    pos += t.size();
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) throw DimensionError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ugdd
