#include "ugdd/fusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "ugdd/errors.hpp"

namespace ugdd::fusion {

namespace {

DirectionParams make_direction(ParameterStore& store, const std::string& prefix, std::size_t c, Rng& rng) {
  DirectionParams d;
  d.w_q = store.add(prefix + ".wq", uniform_init(Shape{1, 1, c, c}, c, rng));
  d.w_k = store.add(prefix + ".wk", uniform_init(Shape{1, 1, c, c}, c, rng));
  // Zero value projection: the residual starts as an identity.
  d.w_v = store.add(prefix + ".wv", Tensor(Shape{1, 1, c, c}));
  d.offset_w = store.add(prefix + ".offset.w", Tensor(Shape{2, 2 * c, 3, 3}));
  d.offset_b = store.add(prefix + ".offset.b", Tensor(Shape{1, 2, 1, 1}));
  d.rel_bias = store.add(prefix + ".relbias", Tensor(Shape{1, 1, 2 * kBiasRadius + 1, 2 * kBiasRadius + 1}));
  return d;
}

Tensor bilinear_resize(const Tensor& u, std::size_t h, std::size_t w) {
  const Shape s = u.shape();
  Tensor out(Shape{s.n, s.c, h, w});
  const double sy = static_cast<double>(s.h) / static_cast<double>(h);
  const double sx = static_cast<double>(s.w) / static_cast<double>(w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < h; ++y) {
        const double py = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(s.h - 1));
        const auto y0 = static_cast<std::size_t>(std::floor(py));
        const std::size_t y1 = std::min(y0 + 1, s.h - 1);
        const double wy = py - static_cast<double>(y0);
        for (std::size_t x = 0; x < w; ++x) {
          const double px = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(s.w - 1));
          const auto x0 = static_cast<std::size_t>(std::floor(px));
          const std::size_t x1 = std::min(x0 + 1, s.w - 1);
          const double wx = px - static_cast<double>(x0);
          out.at(n, c, y, x) = (1 - wy) * ((1 - wx) * u.at(n, c, y0, x0) + wx * u.at(n, c, y0, x1)) +
                               wy * ((1 - wx) * u.at(n, c, y1, x0) + wx * u.at(n, c, y1, x1));
        }
      }
  return out;
}

void check_unit_interval(const Tensor& u) {
  for (double v : u.storage())
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("uncertainty outside [0,1]: " + std::to_string(v));
}

}  // namespace

FusionSiteParams make_site(ParameterStore& store, const std::string& prefix, std::size_t channels, Rng& rng) {
  FusionSiteParams site;
  site.channels = channels;
  site.to_frequency = make_direction(store, prefix + ".to_f", channels, rng);
  site.to_spatial = make_direction(store, prefix + ".to_s", channels, rng);
  return site;
}

Tensor rescale_uncertainty(const Tensor& u, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw DimensionError("rescale_uncertainty: empty target grid");
  Tensor cur = u;
  while ((cur.shape().h != h || cur.shape().w != w) && cur.shape().h >= 2 * h && cur.shape().w >= 2 * w &&
         cur.shape().h % 2 == 0 && cur.shape().w % 2 == 0) {
    cur = bilinear_resize(cur, cur.shape().h / 2, cur.shape().w / 2);
  }
  if (cur.shape().h == h && cur.shape().w == w) return cur;
  Tensor out = bilinear_resize(cur, h, w);
  for (double& v : out.storage()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

ag::Var gate(const ag::Var& features, const ag::Var& u, GateMode mode) {
  check_unit_interval(u.value());
  if (u.shape().c != 1 || u.shape().h != features.shape().h || u.shape().w != features.shape().w) {
    throw DimensionError("gate: uncertainty " + u.shape().str() + " incompatible with features " + features.shape().str());
  }
  return mode == GateMode::Target ? ag::mul(u, features) : ag::mul(ag::one_minus(u), features);
}

ag::Var learn_offsets(const ag::Var& target, const ag::Var& source, const DirectionParams& p) {
  const std::array<ag::Var, 2> parts{target, source};
  ag::Var raw = ag::conv2d(ag::concat(parts, 1), p.offset_w, p.offset_b, {1, 1});
  const double radius = static_cast<double>(std::min(target.shape().h, target.shape().w)) / 2.0;
  return ag::clamp(raw, -radius, radius);
}

ag::Var learn_and_align(const ag::Var& target, const ag::Var& source, const DirectionParams& p) {
  return ag::bilinear_sample(source, learn_offsets(target, source, p));
}

ag::Var to_tokens(const ag::Var& x) {
  const Shape s = x.shape();
  return ag::reshape(ag::permute(x, {0, 2, 3, 1}), Shape{s.n, 1, s.h * s.w, s.c});
}

ag::Var from_tokens(const ag::Var& tokens, std::size_t h, std::size_t w) {
  const Shape s = tokens.shape();
  if (s.h != h * w) throw DimensionError("from_tokens: token count does not match grid");
  return ag::permute(ag::reshape(tokens, Shape{s.n, h, w, s.w}), {0, 3, 1, 2});
}

AttentionResult guided_cross_attention(const ag::Var& query_source, const ag::Var& kv_source,
                                       const DirectionParams& p) {
  const Shape s = query_source.shape();
  if (!(kv_source.shape() == s)) throw DimensionError("guided_cross_attention: query/key grids differ");
  ag::Var q = ag::matmul(to_tokens(query_source), p.w_q);
  ag::Var kv = to_tokens(kv_source);
  ag::Var k = ag::matmul(kv, p.w_k);
  ag::Var v = ag::matmul(kv, p.w_v);
  ag::Var logits = ag::scale(ag::matmul(q, ag::transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(s.c)));
  logits = ag::add(logits, ag::relative_position_bias(p.rel_bias, s.h, s.w));
  ag::Var weights = ag::softmax(logits, 3);
  return {from_tokens(ag::matmul(weights, v), s.h, s.w), weights};
}

ag::Var rectify(const ag::Var& target_features, const ag::Var& target_u, const ag::Var& source_features,
                const ag::Var& source_u, const DirectionParams& p) {
  check_unit_interval(target_u.value());
  if (target_u.value().max() == 0.0) return target_features;
  ag::Var unc = gate(target_features, target_u, GateMode::Target);
  ag::Var rel = gate(source_features, source_u, GateMode::Reliable);
  ag::Var aligned = learn_and_align(unc, rel, p);
  return ag::add(target_features, guided_cross_attention(unc, aligned, p).output);
}

std::pair<ag::Var, ag::Var> ugbff_fuse(const ag::Var& f_s, const ag::Var& f_f, const ag::Var& u_s,
                                       const ag::Var& u_f, const FusionSiteParams& site) {
  if (!(f_s.shape() == f_f.shape())) throw DimensionError("ugbff_fuse: branch features differ in shape");
  ag::Var fused_f = rectify(f_f, u_f, f_s, u_s, site.to_frequency);
  ag::Var fused_s = rectify(f_s, u_s, f_f, u_f, site.to_spatial);
  return {fused_s, fused_f};
}

}  // namespace ugdd::fusion
