#include "ugdd/loss.hpp"

#include <algorithm>
#include <cmath>

#include "ugdd/distance.hpp"
#include "ugdd/errors.hpp"

namespace ugdd::loss {

namespace {

void check_labels(const ag::Var& p, const Tensor& y) {
  const Shape ps = p.shape(), ys = y.shape();
  if (ys.n != ps.n || ys.c != 1 || ys.h != ps.h || ys.w != ps.w) {
    throw DimensionError("labels " + ys.str() + " do not match prediction " + ps.str());
  }
  for (double v : y.storage()) {
    if (v < 0.0 || v >= static_cast<double>(ps.c) || v != std::floor(v)) {
      throw DimensionError("label value " + std::to_string(v) + " is not a class index");
    }
  }
}

Tensor one_hot(const Tensor& y, std::size_t classes) {
  const Shape s = y.shape();
  Tensor out(Shape{s.n, classes, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < s.h * s.w; ++i) {
      const auto k = static_cast<std::size_t>(y[n * s.h * s.w + i]);
      out[(n * classes + k) * s.h * s.w + i] = 1.0;
    }
  return out;
}

// Mean over (c,h,w) of a per-pixel map, then over the batch.
ag::Var image_mean_then_batch(const ag::Var& map) {
  const Shape s = map.shape();
  ag::Var per_image = ag::scale(ag::sum_axes(map, {false, true, true, true}), 1.0 / static_cast<double>(s.h * s.w));
  return ag::mean(per_image);
}

constexpr std::array<bool, 4> kImageAxes{false, true, true, true};

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Dice: return "dice";
    case Variant::DiceCE: return "dice+ce";
    case Variant::DiceCEBoundary: return "dice+ce+boundary";
    case Variant::Ugml: return "ugml";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "dice") return Variant::Dice;
  if (s == "dice+ce" || s == "ce+dice") return Variant::DiceCE;
  if (s == "dice+ce+boundary" || s == "boundary") return Variant::DiceCEBoundary;
  if (s == "ugml") return Variant::Ugml;
  throw ConfigError("unknown loss variant '" + s + "' (expected dice, dice+ce, dice+ce+boundary or ugml)");
}

void LossConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("loss.margin must be > 0");
  if (!(lambda >= 0.0)) throw ConfigError("loss.lambda must be >= 0");
  if (!(boundary_weight >= 0.0)) throw ConfigError("loss.boundary_weight must be >= 0");
}

ag::Var cross_entropy(const ag::Var& p, const Tensor& y) {
  check_labels(p, y);
  ag::Var picked = ag::mul(ag::constant(one_hot(y, p.shape().c)), ag::log(p, kLogEps));
  return ag::scale(image_mean_then_batch(picked), -1.0);
}

ag::Var dice_loss(const ag::Var& p, const Tensor& y) {
  check_labels(p, y);
  ag::Var fg = ag::narrow(p, 1, 1, 1);
  ag::Var yv = ag::constant(y);
  ag::Var inter = ag::sum_axes(ag::mul(fg, yv), kImageAxes);
  ag::Var denom = ag::add(ag::sum_axes(fg, kImageAxes), ag::sum_axes(yv, kImageAxes));
  ag::Var dice = ag::div(ag::add_scalar(ag::scale(inter, 2.0), kDiceSmooth), ag::add_scalar(denom, kDiceSmooth));
  return ag::mean(ag::one_minus(dice));
}

ag::Var seg_loss(const ag::Var& p, const Tensor& y) { return ag::add(cross_entropy(p, y), dice_loss(p, y)); }

double adaptive_margin(double u, double m) {
  if (!(u >= 0.0 && u <= 1.0)) throw ContractError("uncertainty " + std::to_string(u) + " outside [0,1]");
  return (1.0 - u) * m;
}

ag::Var margin_loss(const ag::Var& p, const Tensor& u, const Tensor& y, double m) {
  check_labels(p, y);
  const Shape s = p.shape();
  if (!(u.shape() == y.shape())) throw DimensionError("uncertainty " + u.shape().str() + " does not match labels");
  const std::size_t plane = s.h * s.w;
  Tensor xi(u.shape());
  for (std::size_t i = 0; i < u.size(); ++i) xi[i] = adaptive_margin(u[i], m);
  // Strongest competing class per pixel, chosen on values; the gradient
  // then flows through that class only.
  Tensor rival(s);
  const Tensor& pv = p.value();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const auto gt = static_cast<std::size_t>(y[n * plane + i]);
      std::size_t best = s.c;
      for (std::size_t k = 0; k < s.c; ++k) {
        if (k == gt) continue;
        if (best == s.c || pv[(n * s.c + k) * plane + i] > pv[(n * s.c + best) * plane + i]) best = k;
      }
      rival[(n * s.c + best) * plane + i] = 1.0;
    }
  const Tensor target = one_hot(y, s.c);
  Tensor signed_sel = target;
  for (std::size_t i = 0; i < signed_sel.size(); ++i) signed_sel[i] -= rival[i];
  // gap = p_y - p_rival
  ag::Var gap = ag::sum_axes(ag::mul(p, ag::constant(std::move(signed_sel))), {false, true, false, false});
  ag::Var hinge = ag::max_scalar(ag::sub(ag::constant(std::move(xi)), gap), 0.0);
  return image_mean_then_batch(hinge);
}

ag::Var ugml(const ag::Var& p, const Tensor& u, const Tensor& y, const LossConfig& cfg) {
  ag::Var seg = seg_loss(p, y);
  if (cfg.lambda == 0.0) return seg;
  return ag::add(seg, ag::scale(margin_loss(p, u, y, cfg.margin), cfg.lambda));
}

Tensor signed_distance(const Tensor& y) {
  const Shape s = y.shape();
  const std::size_t plane = s.h * s.w;
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::vector<std::uint8_t> fg(plane), bg(plane);
    std::size_t count = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      fg[i] = y[n * plane + i] > 0.5;
      bg[i] = !fg[i];
      count += fg[i];
    }
    if (count == 0 || count == plane) continue;
    const auto to_fg = squared_distance_transform(fg, s.h, s.w);
    const auto to_bg = squared_distance_transform(bg, s.h, s.w);
    for (std::size_t i = 0; i < plane; ++i) out[n * plane + i] = fg[i] ? -std::sqrt(to_bg[i]) : std::sqrt(to_fg[i]);
  }
  return out;
}

ag::Var boundary_loss(const ag::Var& p, const Tensor& y) {
  check_labels(p, y);
  ag::Var fg = ag::narrow(p, 1, 1, 1);
  return image_mean_then_batch(ag::mul(fg, ag::constant(signed_distance(y))));
}

ag::Var objective(const ag::Var& p, const Tensor& u, const Tensor& y, const LossConfig& cfg) {
  switch (cfg.variant) {
    case Variant::Dice: return dice_loss(p, y);
    case Variant::DiceCE: return seg_loss(p, y);
    case Variant::DiceCEBoundary: return ag::add(seg_loss(p, y), ag::scale(boundary_loss(p, y), cfg.boundary_weight));
    case Variant::Ugml: return ugml(p, u, y, cfg);
  }
  throw ConfigError("unhandled loss variant");
}

}  // namespace ugdd::loss
