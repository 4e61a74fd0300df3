#include "ugdd/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "ugdd/errors.hpp"

namespace ugdd::uncertainty {

Tensor argmax_mask(const Tensor& probs) {
  const Shape s = probs.shape();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < s.c; ++k)
          if (probs.at(n, k, y, x) > probs.at(n, best, y, x)) best = k;
        out.at(n, 0, y, x) = static_cast<double>(best);
      }
  return out;
}

double normalized_entropy(std::span<const double> p, double eps) {
  if (p.size() < 2) return 0.0;
  double h = 0.0;
  for (double v : p) h -= v * std::log(v + eps);
  return std::clamp(h / std::log(static_cast<double>(p.size())), 0.0, 1.0);
}

Tensor entropy_map(const Tensor& probs, double eps) {
  const Shape s = probs.shape();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  std::vector<double> p(s.c);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        for (std::size_t k = 0; k < s.c; ++k) p[k] = probs.at(n, k, y, x);
        out.at(n, 0, y, x) = normalized_entropy(p, eps);
      }
  return out;
}

Tensor apply_transform(const Tensor& x, Transform t) {
  if (t == Transform::Identity) return x;
  const Shape s = x.shape();
  Tensor out(s);
  const bool fv = t == Transform::FlipVertical || t == Transform::Rotate180;
  const bool fh = t == Transform::FlipHorizontal || t == Transform::Rotate180;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx)
          out.at(n, c, y, xx) = x.at(n, c, fv ? s.h - 1 - y : y, fh ? s.w - 1 - xx : xx);
  return out;
}

// Every transform in the set is an involution.
Tensor invert_transform(const Tensor& x, Transform t) { return apply_transform(x, t); }

std::vector<Tensor> tta_mean(const MultiForward& model, const Tensor& x) {
  std::vector<Tensor> acc;
  for (Transform t : kTtaTransforms) {
    std::vector<Tensor> outs = model(apply_transform(x, t));
    if (acc.empty()) {
      for (auto& o : outs) acc.push_back(invert_transform(o, t));
    } else {
      if (outs.size() != acc.size()) throw ContractError("tta_mean: model output count changed");
      for (std::size_t i = 0; i < outs.size(); ++i) acc[i] += invert_transform(outs[i], t);
    }
  }
  for (auto& a : acc) a *= 1.0 / static_cast<double>(kTtaTransforms.size());
  return acc;
}

Tensor tta_mean_prob(const std::function<Tensor(const Tensor&)>& model, const Tensor& x) {
  return tta_mean([&](const Tensor& v) { return std::vector<Tensor>{model(v)}; }, x).front();
}

std::vector<unsigned char> to_gray8(const Tensor& u) {
  std::vector<unsigned char> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    out[i] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(u[i], 0.0, 1.0)));
  return out;
}

}  // namespace ugdd::uncertainty
