#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ugdd/tensor.hpp"

namespace ugdd::uncertainty {

/// Stabilizer inside log(p + eps).
inline constexpr double kEntropyEps = 1e-8;

/// Per-pixel class index of a (n,K,h,w) probability map as a (n,1,h,w)
/// tensor. Ties go to the lower class index.
Tensor argmax_mask(const Tensor& probs);

/// Normalized entropy -sum_k p log(p + eps) / log K, clamped to [0, 1].
/// Output is (n,1,h,w).
Tensor entropy_map(const Tensor& probs, double eps = kEntropyEps);
double normalized_entropy(std::span<const double> p, double eps = kEntropyEps);

enum class Transform { Identity, FlipHorizontal, FlipVertical, Rotate180 };

/// The fixed test-time augmentation set.
inline constexpr std::array<Transform, 4> kTtaTransforms{Transform::Identity, Transform::FlipHorizontal,
                                                        Transform::FlipVertical, Transform::Rotate180};

Tensor apply_transform(const Tensor& x, Transform t);
Tensor invert_transform(const Tensor& x, Transform t);

/// Forward function returning one or more (n,K,h,w) probability maps.
using MultiForward = std::function<std::vector<Tensor>(const Tensor&)>;

/// Mean over the TTA set of inverse-realigned outputs, one per model output.
std::vector<Tensor> tta_mean(const MultiForward& model, const Tensor& x);
Tensor tta_mean_prob(const std::function<Tensor(const Tensor&)>& model, const Tensor& x);

/// round(255 * u) as 8-bit values, row-major over one (1,1,h,w) map.
std::vector<unsigned char> to_gray8(const Tensor& u);

}  // namespace ugdd::uncertainty
