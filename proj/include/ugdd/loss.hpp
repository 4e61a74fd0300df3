#pragma once

// Segmentation losses. P is (n,K,H,W) probabilities, Y is (n,1,H,W) with class
// indices, U is (n,1,H,W) uncertainty in [0,1] treated as a constant.

#include <string>

#include "ugdd/autograd.hpp"

namespace ugdd::loss {

enum class Variant { Dice, DiceCE, DiceCEBoundary, Ugml };

std::string to_string(Variant v);
/// dice, dice+ce, dice+ce+boundary, ugml
Variant parse_variant(const std::string& s);

struct LossConfig {
  double margin = 0.5;
  double lambda = 0.1;
  double boundary_weight = 0.01;
  Variant variant = Variant::Ugml;

  void validate() const;
};

inline constexpr double kLogEps = 1e-8;
inline constexpr double kDiceSmooth = 1.0;

/// Mean over pixels of -log(p_y + eps), averaged over the batch.
ag::Var cross_entropy(const ag::Var& p, const Tensor& y);
/// 1 - (2 sum p_fg y + 1) / (sum p_fg + sum y + 1) per image, averaged over the batch.
ag::Var dice_loss(const ag::Var& p, const Tensor& y);
/// cross_entropy + dice_loss
ag::Var seg_loss(const ag::Var& p, const Tensor& y);

/// (1 - u) m. Throws ContractError when u is outside [0,1].
double adaptive_margin(double u, double m);
/// Mean over pixels of max(0, xi - (p_y - max_{k != y} p_k)), averaged over the batch.
ag::Var margin_loss(const ag::Var& p, const Tensor& u, const Tensor& y, double m);
/// seg_loss + lambda * margin_loss
ag::Var ugml(const ag::Var& p, const Tensor& u, const Tensor& y, const LossConfig& cfg);

/// Negative distance to the nearest background pixel inside the mask, positive
/// distance to the nearest foreground pixel outside; all zero when the mask is
/// empty or full. (n,1,H,W) in, (n,1,H,W) out.
Tensor signed_distance(const Tensor& y);
/// Mean over pixels of p_fg * signed_distance, averaged over the batch.
ag::Var boundary_loss(const ag::Var& p, const Tensor& y);

/// The configured training objective for one prediction.
ag::Var objective(const ag::Var& p, const Tensor& u, const Tensor& y, const LossConfig& cfg);

}  // namespace ugdd::loss
