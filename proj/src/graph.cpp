#include "ugdd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ugdd/errors.hpp"
#include "ugdd/fusion.hpp"
#include "ugdd/uncertainty.hpp"

namespace ugdd::graph {

namespace {

void check_mask_pair(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()) || a.shape().n != 1 || a.shape().c != 1) {
    throw DimensionError("mask pair must be two (1,1,H,W) tensors, got " + a.shape().str() + " and " + b.shape().str());
  }
}

double dist2(const Point& a, const Point& b) {
  const double dy = a[0] - b[0], dx = a[1] - b[1];
  return dy * dy + dx * dx;
}

Point pixel_point(std::size_t idx, std::size_t width) {
  return {static_cast<double>(idx / width), static_cast<double>(idx % width)};
}

// FPS over a pixel list, started at the candidate farthest from the ROI centre.
std::vector<std::size_t> fps_pixels(const std::vector<std::size_t>& pixels, std::size_t k, const RoiBox& roi,
                                    std::size_t width) {
  if (pixels.empty() || k == 0) return {};
  std::vector<Point> pts;
  pts.reserve(pixels.size());
  for (std::size_t p : pixels) pts.push_back(pixel_point(p, width));
  const Point centre{(static_cast<double>(roi.y0) + static_cast<double>(roi.y1) - 1.0) / 2.0,
                     (static_cast<double>(roi.x0) + static_cast<double>(roi.x1) - 1.0) / 2.0};
  auto picked = farthest_point_sample(pts, k, farthest_from(pts, centre));
  std::vector<std::size_t> out;
  out.reserve(picked.size());
  for (std::size_t i : picked) out.push_back(pixels[i]);
  return out;
}

template <class T>
void repeat_to(std::vector<T>& v, std::size_t n) {
  const std::size_t base = v.size();
  for (std::size_t i = 0; v.size() < n; ++i) v.push_back(v[i % base]);
}

}  // namespace

RoiBox compute_roi(const Tensor& r_s, const Tensor& r_f) {
  check_mask_pair(r_s, r_f);
  const std::size_t H = r_s.shape().h, W = r_s.shape().w;
  RoiBox box{H, W, 0, 0};
  bool any = false;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (r_s.at(0, 0, y, x) <= 0.5 && r_f.at(0, 0, y, x) <= 0.5) continue;
      any = true;
      box.y0 = std::min(box.y0, y);
      box.x0 = std::min(box.x0, x);
      box.y1 = std::max(box.y1, y + 1);
      box.x1 = std::max(box.x1, x + 1);
    }
  return any ? box : RoiBox{};
}

RegionPartition partition(const Tensor& r_s, const Tensor& r_f, const RoiBox& roi) {
  check_mask_pair(r_s, r_f);
  RegionPartition part;
  part.roi = roi;
  part.height = r_s.shape().h;
  part.width = r_s.shape().w;
  const std::size_t n = part.height * part.width;
  part.rel.assign(n, 0);
  part.unc.assign(n, 0);
  part.ctx.assign(n, 0);
  for (std::size_t y = roi.y0; y < roi.y1; ++y)
    for (std::size_t x = roi.x0; x < roi.x1; ++x) {
      const bool s = r_s.at(0, 0, y, x) > 0.5, f = r_f.at(0, 0, y, x) > 0.5;
      const std::size_t i = y * part.width + x;
      if (s && f) part.rel[i] = 1;
      else if (s || f) part.unc[i] = 1;
      else part.ctx[i] = 1;
    }
  return part;
}

std::size_t farthest_from(std::span<const Point> coords, const Point& centre) {
  if (coords.empty()) throw DimensionError("farthest_from: no points");
  std::size_t best = 0;
  double best_d = -1.0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double d = dist2(coords[i], centre);
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Point> coords, std::size_t k, std::size_t start) {
  const std::size_t n = coords.size();
  k = std::min(k, n);
  if (k == 0) return {};
  if (start >= n) throw DimensionError("farthest_point_sample: start index out of range");
  std::vector<std::size_t> picked{start};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  taken[start] = true;
  while (picked.size() < k) {
    const Point& last = coords[picked.back()];
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      nearest[i] = std::min(nearest[i], dist2(coords[i], last));
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    taken[best] = true;
    picked.push_back(best);
  }
  return picked;
}

const char* to_string(NodeLabel l) {
  switch (l) {
    case NodeLabel::Query: return "query";
    case NodeLabel::Reliable: return "reliable";
    case NodeLabel::Context: return "context";
  }
  return "?";
}

NodeSet sample_nodes(const RegionPartition& part, const Tensor& u_mean, const GraphConfig& cfg) {
  NodeSet set;
  if (part.roi.empty()) return set;
  if (cfg.num_queries == 0 || cfg.num_queries >= cfg.num_nodes) {
    throw ConfigError("graph: need 0 < num_queries < num_nodes");
  }
  const std::size_t W = part.width;
  std::vector<std::size_t> unc, rel, ctx;
  for (std::size_t y = part.roi.y0; y < part.roi.y1; ++y)
    for (std::size_t x = part.roi.x0; x < part.roi.x1; ++x) {
      const std::size_t i = y * W + x;
      if (part.unc[i]) unc.push_back(i);
      else if (part.rel[i]) rel.push_back(i);
      else ctx.push_back(i);
    }

  // Queries: highest score first, raster order on ties.
  std::vector<std::size_t> queries = unc;
  std::stable_sort(queries.begin(), queries.end(),
                   [&](std::size_t a, std::size_t b) { return u_mean[a] > u_mean[b]; });
  if (queries.size() > cfg.num_queries) queries.resize(cfg.num_queries);
  std::vector<bool> is_query(part.height * W, false);
  for (std::size_t q : queries) is_query[q] = true;
  if (queries.size() < cfg.num_queries) {
    for (std::size_t p : fps_pixels(rel, cfg.num_queries - queries.size(), part.roi, W)) {
      queries.push_back(p);
      is_query[p] = true;
    }
  }
  if (queries.empty()) {
    // Union is non-empty whenever the box is, so this only guards corrupt input.
    throw ContractError("graph: no query candidates inside a non-empty ROI");
  }
  repeat_to(queries, cfg.num_queries);

  // References: area-proportional split between reliable and context pixels.
  std::vector<std::size_t> rel_cand;
  for (std::size_t p : rel)
    if (!is_query[p]) rel_cand.push_back(p);
  const std::size_t n_ref = cfg.num_nodes - cfg.num_queries;
  const std::size_t total = rel_cand.size() + ctx.size();
  std::vector<std::size_t> refs;
  std::vector<NodeLabel> ref_labels;
  if (total == 0) {
    for (std::size_t i = 0; i < n_ref; ++i) {
      refs.push_back(queries[i % queries.size()]);
      ref_labels.push_back(NodeLabel::Context);
    }
  } else {
    std::size_t want_rel = static_cast<std::size_t>(
        std::llround(static_cast<double>(n_ref) * static_cast<double>(rel_cand.size()) / static_cast<double>(total)));
    want_rel = std::min(want_rel, rel_cand.size());
    std::size_t want_ctx = std::min(n_ref - want_rel, ctx.size());
    want_rel = std::min(n_ref - want_ctx, rel_cand.size());
    for (std::size_t p : fps_pixels(rel_cand, want_rel, part.roi, W)) {
      refs.push_back(p);
      ref_labels.push_back(NodeLabel::Reliable);
    }
    for (std::size_t p : fps_pixels(ctx, want_ctx, part.roi, W)) {
      refs.push_back(p);
      ref_labels.push_back(NodeLabel::Context);
    }
    repeat_to(refs, n_ref);
    repeat_to(ref_labels, n_ref);
  }

  set.num_queries = cfg.num_queries;
  set.pixels = queries;
  set.labels.assign(queries.size(), NodeLabel::Query);
  set.pixels.insert(set.pixels.end(), refs.begin(), refs.end());
  set.labels.insert(set.labels.end(), ref_labels.begin(), ref_labels.end());
  return set;
}

UggrParams make_uggr(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t classes,
                     Rng& rng) {
  UggrParams p;
  p.dim = dim;
  const Shape sq{1, 1, dim, dim};
  p.att_q = store.add(prefix + ".att.q", uniform_init(sq, dim, rng));
  p.att_k = store.add(prefix + ".att.k", uniform_init(sq, dim, rng));
  p.att_v = store.add(prefix + ".att.v", uniform_init(sq, dim, rng));
  p.srm_w = store.add(prefix + ".srm.w", uniform_init(sq, dim, rng));
  p.crm_a = store.add(prefix + ".crm.a", uniform_init(sq, dim, rng));
  p.crm_b = store.add(prefix + ".crm.b", uniform_init(sq, dim, rng));
  p.crm_v = store.add(prefix + ".crm.v", uniform_init(sq, dim, rng));
  p.proj = store.add(prefix + ".proj", Tensor(sq));
  p.head_w = store.add(prefix + ".head.w", uniform_init(Shape{classes, dim, 1, 1}, dim, rng));
  p.head_b = store.add(prefix + ".head.b", uniform_init(Shape{1, classes, 1, 1}, dim, rng));
  return p;
}

AttentionResult priority_cross_attention(const ag::Var& x_q, const ag::Var& x_kv, const std::vector<bool>& reliable,
                                         const UggrParams& p, double tau) {
  const std::size_t nr = x_kv.shape().h, d = x_q.shape().w;
  if (reliable.size() != nr) throw DimensionError("priority_cross_attention: label count differs from references");
  ag::Var q = ag::matmul(x_q, p.att_q);
  ag::Var k = ag::matmul(x_kv, p.att_k);
  ag::Var v = ag::matmul(x_kv, p.att_v);
  Tensor bias(Shape{1, 1, 1, nr});
  for (std::size_t j = 0; j < nr; ++j) bias[j] = reliable[j] ? tau : 0.0;
  ag::Var logits = ag::scale(ag::matmul(q, ag::transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  ag::Var weights = ag::softmax(ag::add(logits, ag::constant(std::move(bias))), 3);
  return {ag::matmul(weights, v), weights};
}

std::vector<double> normalized_adjacency(std::span<const double> a, std::size_t n) {
  if (a.size() != n * n) throw DimensionError("normalized_adjacency: matrix is not n x n");
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = std::accumulate(a.begin() + static_cast<std::ptrdiff_t>(i * n),
                                     a.begin() + static_cast<std::ptrdiff_t>((i + 1) * n), 0.0);
    inv_sqrt[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = inv_sqrt[i] * a[i * n + j] * inv_sqrt[j];
  return out;
}

std::vector<double> knn_adjacency(std::span<const Point> coords, std::size_t k) {
  const std::size_t n = coords.size();
  k = std::min(k, n > 0 ? n - 1 : 0);
  std::vector<double> a(n * n, 0.0);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i * n + i] = 1.0;
    std::iota(order.begin(), order.end(), std::size_t{0});
    order.erase(order.begin() + static_cast<std::ptrdiff_t>(i));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t x, std::size_t y) {
                        const double dx = dist2(coords[i], coords[x]), dy = dist2(coords[i], coords[y]);
                        return dx < dy || (dx == dy && x < y);
                      });
    for (std::size_t j = 0; j < k; ++j) a[i * n + order[j]] = 1.0;
    order.resize(n);
  }
  return a;
}

ag::Var spatial_reason(const ag::Var& h, std::span<const Point> coords, const ag::Var& w, std::size_t k) {
  const std::size_t n = h.shape().h;
  if (coords.size() != n) throw DimensionError("spatial_reason: coordinate count differs from node count");
  Tensor adj(Shape{1, 1, n, n}, normalized_adjacency(knn_adjacency(coords, k), n));
  return ag::matmul(ag::matmul(ag::constant(std::move(adj)), h), w);
}

ag::Var channel_reason(const ag::Var& h, const UggrParams& p) {
  const std::size_t n = h.shape().h;
  ag::Var ha = ag::matmul(h, p.crm_a), hb = ag::matmul(h, p.crm_b), hv = ag::matmul(h, p.crm_v);
  ag::Var affinity = ag::softmax(
      ag::scale(ag::matmul(ag::transpose_last(ha), hb), 1.0 / std::sqrt(static_cast<double>(n))), 3);
  return ag::matmul(hv, ag::transpose_last(affinity));
}

ag::Var graph_reason(const ag::Var& h, std::span<const Point> coords, const UggrParams& p, std::size_t k) {
  if (coords.size() != h.shape().h) throw DimensionError("graph_reason: coordinate count differs from node count");
  if (h.shape().h < 2) return h;
  return ag::add(spatial_reason(h, coords, p.srm_w, k), channel_reason(h, p));
}

ag::Var composite_features(const RefineInputs& in) {
  const std::array<ag::Var, 4> parts{in.feat_s, in.feat_f, ag::constant(in.u_s), ag::constant(in.u_f)};
  return ag::concat(parts, 1);
}

RefineOutput refine(const RefineInputs& in, const UggrParams& p, const GraphConfig& cfg) {
  const Shape ps = in.p_s.shape();
  const std::size_t H = ps.h, W = ps.w, HW = H * W;
  RefineOutput out;
  out.roi = compute_roi(in.r_s, in.r_f);
  ag::Var average = ag::scale(ag::add(in.p_s, in.p_f), 0.5);
  if (out.roi.empty()) {
    out.bypassed = true;
    out.p_final = average;
  } else {
    const RegionPartition part = partition(in.r_s, in.r_f, out.roi);
    Tensor u_mean(Shape{1, 1, H, W});
    for (std::size_t i = 0; i < HW; ++i) u_mean[i] = 0.5 * (in.u_s[i] + in.u_f[i]);
    out.nodes = sample_nodes(part, u_mean, cfg);

    ag::Var v = composite_features(in);
    if (v.shape().c != p.dim) throw DimensionError("refine: composite width does not match parameters");
    ag::Var tokens = fusion::to_tokens(v);  // (1,1,HW,D)
    const std::size_t nq = out.nodes.num_queries;
    std::vector<std::size_t> q_idx(out.nodes.pixels.begin(), out.nodes.pixels.begin() + static_cast<std::ptrdiff_t>(nq));
    std::vector<std::size_t> r_idx(out.nodes.pixels.begin() + static_cast<std::ptrdiff_t>(nq), out.nodes.pixels.end());
    std::vector<bool> reliable_flags;
    for (std::size_t i = nq; i < out.nodes.size(); ++i) reliable_flags.push_back(out.nodes.labels[i] == NodeLabel::Reliable);

    ag::Var x_q = ag::gather_rows(tokens, q_idx);
    ag::Var x_kv = ag::gather_rows(tokens, r_idx);
    ag::Var x_hat = priority_cross_attention(x_q, x_kv, reliable_flags, p, cfg.tau).output;
    const std::array<ag::Var, 2> node_parts{x_hat, x_kv};
    ag::Var h = ag::concat(node_parts, 2);
    std::vector<Point> coords;
    for (std::size_t px : out.nodes.pixels) coords.push_back(pixel_point(px, W));
    ag::Var h_out = ag::matmul(graph_reason(h, coords, p, cfg.knn), p.proj);
    ag::Var sparse = fusion::from_tokens(ag::scatter_rows(h_out, out.nodes.pixels, HW), H, W);
    ag::Var refined = ag::softmax(ag::conv2d(ag::add(v, sparse), p.head_w, p.head_b), 1);

    Tensor inside(Shape{1, 1, H, W}), outside(Shape{1, 1, H, W}, 1.0);
    for (std::size_t y = out.roi.y0; y < out.roi.y1; ++y)
      for (std::size_t x = out.roi.x0; x < out.roi.x1; ++x) {
        inside.at(0, 0, y, x) = 1.0;
        outside.at(0, 0, y, x) = 0.0;
      }
    out.p_final = ag::add(ag::mul(refined, ag::constant(std::move(inside))),
                          ag::mul(average, ag::constant(std::move(outside))));
  }
  out.r_final = uncertainty::argmax_mask(out.p_final.value());
  out.u_final = uncertainty::entropy_map(out.p_final.value());
  return out;
}

std::string nodes_csv(const NodeSet& nodes, const Tensor& u_mean) {
  std::ostringstream os;
  os << "y,x,label,entropy\n";
  const std::size_t W = u_mean.shape().w;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::size_t p = nodes.pixels[i];
    os << p / W << ',' << p % W << ',' << to_string(nodes.labels[i]) << ',' << u_mean[p] << '\n';
  }
  return os.str();
}

}  // namespace ugdd::graph
