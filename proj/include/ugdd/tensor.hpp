#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ugdd {

/// Fixed rank-4 shape (batch, channel, height, width). Lower-rank data uses
/// singleton dimensions.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t operator[](std::size_t axis) const {
    return axis == 0 ? n : axis == 1 ? c : axis == 2 ? h : w;
  }
  constexpr std::array<std::size_t, 4> dims() const { return {n, c, h, w}; }
  constexpr bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense row-major rank-4 array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape s) { return Tensor(s, 0.0); }
  static Tensor ones(Shape s) { return Tensor(s, 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() & { return data_; }
  const std::vector<double>& storage() const& { return data_; }
  // By value on temporaries so `for (double v : f().storage())` stays valid.
  std::vector<double> storage() && { return std::move(data_); }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a (1,1,1,1) tensor.
  double item() const;

  bool all_finite() const;
  double max() const;
  double min() const;
  double sum() const;

  Tensor reshaped(Shape s) const;
  /// Copy of one batch entry as a (1,c,h,w) tensor.
  Tensor sample(std::size_t n) const;
  /// Copy of channels [c0, c0+count).
  Tensor channels(std::size_t c0, std::size_t count) const;

  void fill(double v);
  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(double s);

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

/// Stack (1,c,h,w) tensors along the batch axis.
Tensor stack_batch(std::span<const Tensor> items);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace ugdd
