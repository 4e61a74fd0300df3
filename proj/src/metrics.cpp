#include "ugdd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "ugdd/distance.hpp"
#include "ugdd/errors.hpp"

namespace ugdd::metrics {

namespace {

void same_grid(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError("mask shapes differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

// Distances from every boundary pixel of `from` to the nearest boundary pixel of `to`.
void directed(const BinaryMask& from, const BinaryMask& to, std::vector<double>& out) {
  const auto d2 = squared_distance_transform(to.data, to.height, to.width);
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from.data[i]) out.push_back(std::sqrt(d2[i]));
}

}  // namespace

Overlap iou_dice(const BinaryMask& pred, const BinaryMask& gt) {
  same_grid(pred, gt);
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i], g = gt.data[i];
    inter += p && g;
    np += p;
    ng += g;
  }
  if (np + ng == 0) return {1.0, 1.0};
  const double iou = static_cast<double>(inter) / static_cast<double>(np + ng - inter);
  // Same value as 2|A n B| / (|A| + |B|), written so the identity holds to the bit.
  return {iou, 2.0 * iou / (1.0 + iou)};
}

BinaryMask boundary(const BinaryMask& m) {
  BinaryMask out(m.height, m.width);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == m.height || x + 1 == m.width || !m.at(y - 1, x) ||
                        !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1);
      out.at(y, x) = edge;
    }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile of no values");
  if (!(q >= 0.0 && q <= 100.0)) throw ContractError("percentile rank outside [0,100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SurfaceDistance surface_distances(const BinaryMask& pred, const BinaryMask& gt) {
  same_grid(pred, gt);
  if (pred.empty_foreground() || gt.empty_foreground()) {
    const double diag = std::hypot(static_cast<double>(pred.height), static_cast<double>(pred.width));
    return {diag, diag, true};
  }
  const BinaryMask bp = boundary(pred), bg = boundary(gt);
  std::vector<double> pooled;
  directed(bp, bg, pooled);
  directed(bg, bp, pooled);
  const double assd = std::accumulate(pooled.begin(), pooled.end(), 0.0) / static_cast<double>(pooled.size());
  return {percentile(std::move(pooled), 95.0), assd, false};
}

std::size_t Calibration::total() const {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  return n;
}

CalibrationAccumulator::CalibrationAccumulator(std::size_t bins)
    : conf_sum_(bins, 0.0), correct_(bins, 0.0), count_(bins, 0) {
  if (bins == 0) throw ConfigError("calibration needs at least one bin");
}

void CalibrationAccumulator::add(double prob_fg, bool gt_fg) {
  if (!(prob_fg >= 0.0 && prob_fg <= 1.0)) throw ContractError("probability outside [0,1]");
  const double conf = std::max(prob_fg, 1.0 - prob_fg);
  const bool pred_fg = prob_fg > 0.5;
  const std::size_t nb = count_.size();
  const auto b = std::min(static_cast<std::size_t>((conf - 0.5) / 0.5 * static_cast<double>(nb)), nb - 1);
  conf_sum_[b] += conf;
  correct_[b] += pred_fg == gt_fg ? 1.0 : 0.0;
  ++count_[b];
}

void CalibrationAccumulator::add(std::span<const double> prob_fg, const BinaryMask& gt) {
  if (prob_fg.size() != gt.size()) throw DimensionError("probability map does not match mask");
  for (std::size_t i = 0; i < gt.size(); ++i) add(prob_fg[i], gt.data[i] != 0);
}

Calibration CalibrationAccumulator::result() const {
  Calibration c;
  const std::size_t nb = count_.size();
  const std::size_t total = std::accumulate(count_.begin(), count_.end(), std::size_t{0});
  for (std::size_t b = 0; b < nb; ++b) {
    ReliabilityBin bin;
    bin.lower = 0.5 + 0.5 * static_cast<double>(b) / static_cast<double>(nb);
    bin.upper = 0.5 + 0.5 * static_cast<double>(b + 1) / static_cast<double>(nb);
    bin.count = count_[b];
    if (count_[b] > 0) {
      const auto n = static_cast<double>(count_[b]);
      bin.confidence = conf_sum_[b] / n;
      bin.accuracy = correct_[b] / n;
      c.ece += n / static_cast<double>(total) * std::abs(bin.accuracy - bin.confidence);
    }
    c.bins.push_back(bin);
  }
  return c;
}

Calibration ece(std::span<const double> prob_fg, const BinaryMask& gt, std::size_t bins) {
  CalibrationAccumulator acc(bins);
  acc.add(prob_fg, gt);
  return acc.result();
}

std::vector<std::size_t> hard_sample_filter(std::span<const double> iou, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < iou.size(); ++i)
    if (iou[i] < threshold) out.push_back(i);
  return out;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  const auto n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / (n - 1.0));
  return s;
}

TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("paired t-test needs equal-length samples");
  if (a.size() < 2) throw ContractError("paired t-test needs at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const Summary s = summarize(d);
  TTest r;
  r.df = static_cast<double>(d.size() - 1);
  if (s.std == 0.0) {
    r.degenerate = true;
    if (s.mean == 0.0) {
      r.p_two_sided = 1.0;
      r.p_greater = 1.0;
    } else {
      r.t = s.mean > 0 ? INFINITY : -INFINITY;
      r.p_two_sided = 0.0;
      r.p_greater = s.mean > 0 ? 0.0 : 1.0;
    }
    return r;
  }
  r.t = s.mean / (s.std / std::sqrt(static_cast<double>(d.size())));
  const boost::math::students_t dist(r.df);
  r.p_greater = boost::math::cdf(boost::math::complement(dist, r.t));
  r.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

SampleMetrics evaluate_sample(std::span<const double> prob_fg, const BinaryMask& gt, std::size_t bins) {
  if (prob_fg.size() != gt.size()) throw DimensionError("probability map does not match mask");
  BinaryMask pred(gt.height, gt.width);
  for (std::size_t i = 0; i < gt.size(); ++i) pred.data[i] = prob_fg[i] > 0.5;
  SampleMetrics m;
  const Overlap o = iou_dice(pred, gt);
  const SurfaceDistance sd = surface_distances(pred, gt);
  m.iou = o.iou;
  m.dice = o.dice;
  m.hd95 = sd.hd95;
  m.assd = sd.assd;
  m.sentinel = sd.sentinel;
  m.ece = ece(prob_fg, gt, bins).ece;
  return m;
}

}  // namespace ugdd::metrics
