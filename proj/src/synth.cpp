#include "ugdd/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "ugdd/errors.hpp"
#include "ugdd/rng.hpp"

namespace ugdd::synth {

namespace {

constexpr double kPi = std::numbers::pi;

struct Harmonic {
  double amp, phase;
};

double radius_at(double theta, double r0, const std::vector<Harmonic>& hs) {
  double r = 1.0;
  for (std::size_t k = 0; k < hs.size(); ++k) r += hs[k].amp * std::sin(static_cast<double>(k + 1) * theta + hs[k].phase);
  return r0 * r;
}

std::vector<Harmonic> draw_harmonics(Rng& rng, std::size_t n, double budget) {
  std::vector<Harmonic> hs(n);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    hs[k] = {rng.uniform() / static_cast<double>(k + 1), rng.uniform(0.0, 2.0 * kPi)};
    total += hs[k].amp;
  }
  if (total > 0.0) {
    const double scale = budget * rng.uniform(0.3, 1.0) / total;
    for (auto& h : hs) h.amp *= scale;
  }
  return hs;
}

// Standard normal CDF.
double phi(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

using Rgb = std::array<double, 3>;

void paint(Tensor& img, std::size_t y, std::size_t x, const Rgb& c, double alpha) {
  const std::size_t C = img.shape().c;
  for (std::size_t ch = 0; ch < C; ++ch) {
    const double target = C == 1 ? (c[0] + c[1] + c[2]) / 3.0 : c[ch];
    double& v = img.at(0, ch, y, x);
    v = (1.0 - alpha) * v + alpha * target;
  }
}

// Anti-aliased disc of radius r at (cy, cx).
void stamp(Tensor& img, double cy, double cx, double r, const Rgb& c, double opacity) {
  const auto H = static_cast<long>(img.shape().h), W = static_cast<long>(img.shape().w);
  const long y0 = std::max(0L, static_cast<long>(std::floor(cy - r - 1))), y1 = std::min(H - 1, static_cast<long>(std::ceil(cy + r + 1)));
  const long x0 = std::max(0L, static_cast<long>(std::floor(cx - r - 1))), x1 = std::min(W - 1, static_cast<long>(std::ceil(cx + r + 1)));
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      const double d = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
      const double cover = std::clamp(r + 0.5 - d, 0.0, 1.0);
      if (cover > 0.0) paint(img, static_cast<std::size_t>(y), static_cast<std::size_t>(x), c, opacity * cover);
    }
}

void draw_hair(Tensor& img, Rng& rng) {
  const double S = static_cast<double>(img.shape().h);
  const int strands = 1 + static_cast<int>(rng.index(3));
  for (int s = 0; s < strands; ++s) {
    // Quadratic Bezier across the frame.
    const double ay = rng.uniform(0, S), ax = rng.uniform(0, S);
    const double by = rng.uniform(0, S), bx = rng.uniform(0, S);
    const double cy = rng.uniform(0, S), cx = rng.uniform(0, S);
    const double width = rng.uniform(0.35, 0.7);
    const Rgb dark{0.12, 0.09, 0.08};
    const int steps = static_cast<int>(4 * S);
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const double y = (1 - t) * (1 - t) * ay + 2 * (1 - t) * t * by + t * t * cy;
      const double x = (1 - t) * (1 - t) * ax + 2 * (1 - t) * t * bx + t * t * cx;
      stamp(img, y, x, width, dark, 0.35);
    }
  }
}

void draw_marker_ring(Tensor& img, Rng& rng, double cy, double cx, double r) {
  const double ring = r * rng.uniform(1.25, 1.6);
  const double start = rng.uniform(0, 2 * kPi), span = rng.uniform(0.8 * kPi, 1.6 * kPi);
  const Rgb ink{0.35, 0.2, 0.55};
  const int steps = static_cast<int>(8 * ring + 16);
  for (int i = 0; i <= steps; ++i) {
    const double a = start + span * i / steps;
    stamp(img, cy + ring * std::sin(a), cx + ring * std::cos(a), 0.8, ink, 0.4);
  }
}

void draw_specular(Tensor& img, Rng& rng) {
  const double S = static_cast<double>(img.shape().h);
  const int dots = 2 + static_cast<int>(rng.index(5));
  for (int d = 0; d < dots; ++d) stamp(img, rng.uniform(0, S), rng.uniform(0, S), rng.uniform(0.4, 1.2), {1, 1, 1}, 0.85);
}

}  // namespace

unsigned parse_artifacts(const std::string& s) {
  unsigned set = 0;
  std::string list = s;
  std::replace(list.begin(), list.end(), '+', ',');
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty() || item == "none") continue;
    if (item == "hair" || item == "hair-strokes") set |= kHair;
    else if (item == "marker" || item == "marker-ring") set |= kMarkerRing;
    else if (item == "specular" || item == "specular-dots") set |= kSpecular;
    else throw ConfigError("unknown artifact '" + item + "' (expected hair, marker, specular)");
  }
  return set;
}

std::string artifacts_to_string(unsigned set) {
  std::string out;
  auto add = [&](const char* name) { out += out.empty() ? name : std::string("+") + name; };
  if (set & kHair) add("hair");
  if (set & kMarkerRing) add("marker");
  if (set & kSpecular) add("specular");
  return out.empty() ? "none" : out;
}

void SynthConfig::validate(std::size_t levels) const {
  if (size < 8) throw ConfigError("synth.size must be at least 8");
  if (levels > 0 && size % (std::size_t{1} << levels) != 0)
    throw ConfigError("synth.size " + std::to_string(size) + " is not divisible by 2^" + std::to_string(levels));
  if (channels != 1 && channels != 3) throw ConfigError("synth.channels must be 1 or 3");
  if (sigma_min < 0.0 || sigma_max < sigma_min) throw ConfigError("synth sigma range must satisfy 0 <= min <= max");
  if (!(radius_min > 0.0) || radius_max < radius_min || radius_max > 0.45)
    throw ConfigError("synth radius fractions must satisfy 0 < min <= max <= 0.45");
  if (max_amplitude < 0.0 || max_amplitude >= 0.9) throw ConfigError("synth.max_amplitude must be in [0, 0.9)");
  if (noise_std < 0.0 || texture < 0.0 || label_noise < 0.0) throw ConfigError("synth noise terms must be >= 0");
  if (artifact_prob < 0.0 || artifact_prob > 1.0) throw ConfigError("synth.artifact_prob must be in [0,1]");
}

Sample generate_one(const SynthConfig& cfg, std::size_t index) {
  const std::uint64_t seed = derive_seed(cfg.seed, index);
  Rng rng(seed);
  const std::size_t S = cfg.size;
  const double Sd = static_cast<double>(S);

  const double cy = Sd / 2.0 - 0.5 + rng.uniform(-0.15, 0.15) * Sd;
  const double cx = Sd / 2.0 - 0.5 + rng.uniform(-0.15, 0.15) * Sd;
  const double r0 = rng.uniform(cfg.radius_min, cfg.radius_max) * Sd;
  const auto shape = draw_harmonics(rng, cfg.harmonics, cfg.max_amplitude);
  const double sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max);

  // Annotation jitter: a low-order perturbation of the radius in pixels, on
  // its own stream so the image does not depend on it.
  std::vector<Harmonic> jitter;
  if (cfg.label_noise > 0.0) {
    Rng jrng(derive_seed(seed, 1));
    jitter = draw_harmonics(jrng, 4, 1.0);
    double total = 0.0;
    for (const auto& h : jitter) total += h.amp;
    for (auto& h : jitter) h.amp *= cfg.label_noise / std::max(total, 1e-12);
  }

  Rgb skin{rng.uniform(0.75, 0.9), rng.uniform(0.58, 0.72), rng.uniform(0.5, 0.62)};
  const double depth = rng.uniform(0.35, 0.6);
  Rgb lesion{skin[0] * depth, skin[1] * depth * rng.uniform(0.8, 1.0), skin[2] * depth * rng.uniform(0.75, 1.0)};
  const double tex_freq = rng.uniform(1.6, 2.6);
  const double tex_phase_a = rng.uniform(0, 2 * kPi), tex_phase_b = rng.uniform(0, 2 * kPi);

  Sample out;
  out.image = Tensor(Shape{1, cfg.channels, S, S});
  out.mask = BinaryMask(S, S);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double d = std::hypot(dy, dx);
      const double theta = std::atan2(dy, dx);
      const double r = radius_at(theta, r0, shape);
      const bool inside = d <= r;
      double annotated = r;
      for (std::size_t k = 0; k < jitter.size(); ++k)
        annotated += jitter[k].amp * std::sin(static_cast<double>(k + 1) * theta + jitter[k].phase);
      out.mask.at(y, x) = d <= annotated;

      const double w = sigma > 0.0 ? phi((r - d) / sigma) : (inside ? 1.0 : 0.0);
      // Fine checker-like texture on the lesion only; it lives in the high
      // wavelet bands.
      const double tex = cfg.texture * std::sin(tex_freq * static_cast<double>(x) + tex_phase_a) *
                         std::sin(tex_freq * static_cast<double>(y) + tex_phase_b);
      for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
        const double bg = cfg.channels == 1 ? (skin[0] + skin[1] + skin[2]) / 3.0 : skin[ch];
        const double fg = (cfg.channels == 1 ? (lesion[0] + lesion[1] + lesion[2]) / 3.0 : lesion[ch]) * (1.0 + tex);
        out.image.at(0, ch, y, x) = (1.0 - w) * bg + w * fg;
      }
    }

  unsigned drawn = 0;
  if ((cfg.artifacts & kHair) && rng.uniform() < cfg.artifact_prob) {
    draw_hair(out.image, rng);
    drawn |= kHair;
  }
  if ((cfg.artifacts & kMarkerRing) && rng.uniform() < cfg.artifact_prob) {
    draw_marker_ring(out.image, rng, cy, cx, r0);
    drawn |= kMarkerRing;
  }
  if ((cfg.artifacts & kSpecular) && rng.uniform() < cfg.artifact_prob) {
    draw_specular(out.image, rng);
    drawn |= kSpecular;
  }
  if (cfg.noise_std > 0.0)
    for (double& v : out.image.storage()) v += cfg.noise_std * rng.normal();
  for (double& v : out.image.storage()) v = std::clamp(v, 0.0, 1.0);

  char id[32];
  std::snprintf(id, sizeof id, "s%05zu", index);
  out.meta = {id, sigma, r0, cfg.harmonics, drawn, seed};
  return out;
}

std::vector<Sample> generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(generate_one(cfg, i));
  return out;
}

}  // namespace ugdd::synth
