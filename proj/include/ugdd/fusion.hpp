#pragma once

// Uncertainty-guided bi-directional feature fusion at one resolution level.
//
// Direction "to frequency" rectifies the frequency features: the target is
// U_f * F_f, the reliable source is (1 - U_s) * F_s, deformably aligned to the
// target and attended to with the target as query. The reverse direction
// swaps the roles of the two domains.

#include <cstddef>
#include <string>
#include <utility>

#include "ugdd/autograd.hpp"
#include "ugdd/params.hpp"

namespace ugdd::fusion {

/// Half-width of the relative position bias window (7 x 7).
inline constexpr std::size_t kBiasRadius = 3;

struct DirectionParams {
  ag::Var w_q, w_k, w_v;       // (1,1,C,C), no bias
  ag::Var offset_w, offset_b;  // 3x3 conv 2C -> 2, zero-initialized
  ag::Var rel_bias;            // (1,1,7,7), zero-initialized
};

struct FusionSiteParams {
  std::size_t channels = 0;
  DirectionParams to_frequency;  // F <- S
  DirectionParams to_spatial;    // S <- F
};

/// Registers the parameters of one site under `prefix`.
FusionSiteParams make_site(ParameterStore& store, const std::string& prefix, std::size_t channels, Rng& rng);

/// Resample a (n,1,H,W) map to (h,w): half-pixel bilinear, applied as repeated
/// exact halvings for power-of-two reductions so each output is the mean of
/// its source block. Values stay in [0, 1].
Tensor rescale_uncertainty(const Tensor& u, std::size_t h, std::size_t w);

enum class GateMode { Target, Reliable };

/// Target: U * F. Reliable: (1 - U) * F. U broadcasts over channels and must
/// lie in [0, 1] (ContractError otherwise).
ag::Var gate(const ag::Var& features, const ag::Var& u, GateMode mode);

/// Offset field (n,2,h,w) of (dy, dx) from Concat(target, source), clamped to
/// +-min(h,w)/2.
ag::Var learn_offsets(const ag::Var& target, const ag::Var& source, const DirectionParams& p);

/// Source resampled at p + offset(p).
ag::Var learn_and_align(const ag::Var& target, const ag::Var& source, const DirectionParams& p);

struct AttentionResult {
  ag::Var output;   // (n,C,h,w)
  ag::Var weights;  // (n,1,T,T), rows sum to 1
};

/// softmax(Q K^T / sqrt(C) + B) V over raster-flattened tokens.
AttentionResult guided_cross_attention(const ag::Var& query_source, const ag::Var& kv_source,
                                       const DirectionParams& p);

/// One rectification direction. Returns `target_features` itself when the
/// target uncertainty is identically zero.
ag::Var rectify(const ag::Var& target_features, const ag::Var& target_u, const ag::Var& source_features,
                const ag::Var& source_u, const DirectionParams& p);

/// Both directions from the same pre-fusion features: (F^_s, F^_f).
std::pair<ag::Var, ag::Var> ugbff_fuse(const ag::Var& f_s, const ag::Var& f_f, const ag::Var& u_s,
                                       const ag::Var& u_f, const FusionSiteParams& site);

/// (n,C,h,w) -> (n,1,h*w,C) and back.
ag::Var to_tokens(const ag::Var& x);
ag::Var from_tokens(const ag::Var& tokens, std::size_t h, std::size_t w);

}  // namespace ugdd::fusion
