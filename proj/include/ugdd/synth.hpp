#pragma once

// Synthetic fuzzy-lesion images: star-convex blobs with a sinusoidally
// perturbed radius, a blurred boundary, fine lesion texture, sensor noise and
// occluding artifacts. The mask comes from the sharp blob before blurring.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ugdd/mask.hpp"
#include "ugdd/tensor.hpp"

namespace ugdd::synth {

enum Artifact : unsigned { kHair = 1u, kMarkerRing = 2u, kSpecular = 4u };

/// "hair,marker,specular" (or "+"-joined) lists; "none" or "" is the empty set.
unsigned parse_artifacts(const std::string& s);
std::string artifacts_to_string(unsigned set);

struct SynthConfig {
  std::size_t count = 200;
  std::size_t size = 64;
  std::size_t channels = 3;
  std::size_t harmonics = 3;
  /// Upper bound on the sum of relative harmonic amplitudes; below 1 keeps
  /// the radius positive so blobs stay star-convex and simply connected.
  double max_amplitude = 0.35;
  double radius_min = 0.18;  // fraction of size
  double radius_max = 0.35;
  /// Per-sample boundary blur sigma is drawn uniformly from [sigma_min, sigma_max] pixels.
  double sigma_min = 0.0;
  double sigma_max = 3.0;
  /// Scale of the high-frequency lesion texture (0 disables it).
  double texture = 0.15;
  double noise_std = 0.02;
  unsigned artifacts = kHair | kMarkerRing | kSpecular;
  /// Probability that each enabled artifact kind appears in a sample.
  double artifact_prob = 0.5;
  /// Annotation jitter amplitude in pixels (0 = exact mask).
  double label_noise = 0.0;
  std::uint64_t seed = 0;

  /// `levels` is the network depth the images must be divisible for.
  void validate(std::size_t levels = 0) const;
};

struct SampleMeta {
  std::string id;
  double sigma = 0.0;
  double radius = 0.0;  // mean radius in pixels
  std::size_t harmonics = 0;
  unsigned artifacts = 0;
  std::uint64_t seed = 0;
};

struct Sample {
  Tensor image;  // (1,C,H,W) in [0,1]
  BinaryMask mask;
  SampleMeta meta;
};

/// Sample i depends only on (config, i): seeds derive per index.
Sample generate_one(const SynthConfig& cfg, std::size_t index);
std::vector<Sample> generate(const SynthConfig& cfg);

}  // namespace ugdd::synth
