#pragma once

// Graph refinement over the union box of the two branch predictions.
//
// Pixels in the box fall into three sets: reliable (both branches agree on
// foreground), uncertain (exactly one does) and context (neither). High
// entropy uncertain pixels become query nodes; reference nodes are drawn by
// farthest point sampling from the reliable and context sets. Queries attend
// to references with a bias favouring reliable ones, the joint node set is
// refined by a spatial kNN graph convolution plus channel attention, and the
// result is scattered back as a residual on the composite feature map before
// a 1x1 classifier.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ugdd/autograd.hpp"
#include "ugdd/params.hpp"

namespace ugdd::graph {

struct RoiBox {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // [y0,y1) x [x0,x1)

  bool empty() const { return y1 <= y0 || x1 <= x0; }
  bool contains(std::size_t y, std::size_t x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
  std::size_t area() const { return empty() ? 0 : (y1 - y0) * (x1 - x0); }
  bool operator==(const RoiBox&) const = default;
};

/// Tight box around the union of two (1,1,H,W) binary masks; empty when both are empty.
RoiBox compute_roi(const Tensor& r_s, const Tensor& r_f);

struct RegionPartition {
  RoiBox roi;
  std::size_t height = 0, width = 0;
  // Raster-indexed flags over the whole image; all zero outside the box.
  std::vector<std::uint8_t> rel, unc, ctx;
};

RegionPartition partition(const Tensor& r_s, const Tensor& r_f, const RoiBox& roi);

using Point = std::array<double, 2>;

/// Greedy max-min selection of min(k, |coords|) indices starting at `start`.
/// Distance ties go to the lower index.
std::vector<std::size_t> farthest_point_sample(std::span<const Point> coords, std::size_t k, std::size_t start);
/// Index of the point farthest from `centre` (lowest index on ties).
std::size_t farthest_from(std::span<const Point> coords, const Point& centre);

enum class NodeLabel : std::uint8_t { Query, Reliable, Context };
const char* to_string(NodeLabel l);

struct GraphConfig {
  std::size_t num_nodes = 512;
  std::size_t num_queries = 256;
  std::size_t knn = 8;
  double tau = 1.0;
};

struct NodeSet {
  std::vector<std::size_t> pixels;  // raster index; queries first
  std::vector<NodeLabel> labels;
  std::size_t num_queries = 0;

  std::size_t size() const { return pixels.size(); }
};

/// Deterministic node selection. `u_mean` is the (1,1,H,W) query score.
/// Empty ROI gives an empty set.
NodeSet sample_nodes(const RegionPartition& part, const Tensor& u_mean, const GraphConfig& cfg);

struct UggrParams {
  std::size_t dim = 0;
  ag::Var att_q, att_k, att_v;     // (1,1,D,D)
  ag::Var srm_w;                   // (1,1,D,D)
  ag::Var crm_a, crm_b, crm_v;     // (1,1,D,D)
  ag::Var proj;                    // (1,1,D,D), zero-initialized
  ag::Var head_w, head_b;          // (K,D,1,1), (1,K,1,1)
};

UggrParams make_uggr(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t classes, Rng& rng);

struct AttentionResult {
  ag::Var output;   // (1,1,Nq,D)
  ag::Var weights;  // (1,1,Nq,Nr)
};

/// softmax(Q K^T / sqrt(D) + B) (X_kv W_v), B_ij = tau when reference j is reliable.
AttentionResult priority_cross_attention(const ag::Var& x_q, const ag::Var& x_kv, const std::vector<bool>& reliable,
                                         const UggrParams& p, double tau);

/// D^{-1/2} A D^{-1/2} with D the row sums of A (row-major n x n).
std::vector<double> normalized_adjacency(std::span<const double> adjacency, std::size_t n);
/// Directed k-nearest-neighbour adjacency with self loops (ties to the lower index).
std::vector<double> knn_adjacency(std::span<const Point> coords, std::size_t k);

/// \hat{A} H W over the normalized kNN graph.
ag::Var spatial_reason(const ag::Var& h, std::span<const Point> coords, const ag::Var& w, std::size_t k);
/// (H W_v) softmax((H W_a)^T (H W_b) / sqrt(N))^T: attention among channels.
ag::Var channel_reason(const ag::Var& h, const UggrParams& p);

/// spatial_reason + channel_reason; fewer than two nodes pass through unchanged.
ag::Var graph_reason(const ag::Var& h, std::span<const Point> coords, const UggrParams& p, std::size_t k);

struct RefineInputs {
  ag::Var feat_s, feat_f;  // (1,C,H,W)
  Tensor u_s, u_f;         // (1,1,H,W)
  Tensor r_s, r_f;         // (1,1,H,W) binary
  ag::Var p_s, p_f;        // (1,K,H,W)
};

struct RefineOutput {
  ag::Var p_final;
  Tensor r_final, u_final;
  RoiBox roi;
  NodeSet nodes;
  bool bypassed = false;
};

ag::Var composite_features(const RefineInputs& in);

RefineOutput refine(const RefineInputs& in, const UggrParams& p, const GraphConfig& cfg);

/// Node list as CSV rows "y,x,label,entropy".
std::string nodes_csv(const NodeSet& nodes, const Tensor& u_mean);

}  // namespace ugdd::graph
