#pragma once

// Evaluation suite: overlap, surface distances, calibration, hard-sample
// selection and the paired t-test.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ugdd/mask.hpp"

namespace ugdd::metrics {

struct Overlap {
  double iou = 0.0;
  double dice = 0.0;
};

/// Both masks empty counts as perfect agreement (1, 1).
Overlap iou_dice(const BinaryMask& pred, const BinaryMask& gt);

/// Foreground pixels with a 4-neighbour in the background or off the grid.
BinaryMask boundary(const BinaryMask& m);

/// Linear-interpolation percentile (q in [0,100]) of unsorted values.
double percentile(std::vector<double> values, double q);

struct SurfaceDistance {
  double hd95 = 0.0;
  double assd = 0.0;
  /// Either mask was empty; both values hold the image diagonal.
  bool sentinel = false;
};

/// Pooled boundary-to-nearest-boundary distances from both directions.
SurfaceDistance surface_distances(const BinaryMask& pred, const BinaryMask& gt);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double confidence = 0.0;  // mean confidence, 0 when empty
  double accuracy = 0.0;    // fraction correct, 0 when empty
  std::size_t count = 0;

  double center() const { return 0.5 * (lower + upper); }
};

struct Calibration {
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;
  std::size_t total() const;
};

/// Accumulates confidence/correctness over any number of pixels.
class CalibrationAccumulator {
 public:
  explicit CalibrationAccumulator(std::size_t bins = 15);
  /// Confidence max(p, 1 - p); the prediction is foreground when p > 0.5.
  void add(double prob_fg, bool gt_fg);
  void add(std::span<const double> prob_fg, const BinaryMask& gt);
  Calibration result() const;

 private:
  std::vector<double> conf_sum_;
  std::vector<double> correct_;
  std::vector<std::size_t> count_;
};

Calibration ece(std::span<const double> prob_fg, const BinaryMask& gt, std::size_t bins = 15);

/// Indices with iou strictly below the threshold.
std::vector<std::size_t> hard_sample_filter(std::span<const double> iou, double threshold);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for fewer than 2 values
};
Summary summarize(std::span<const double> values);

struct TTest {
  double t = 0.0;
  double df = 0.0;
  double p_two_sided = 1.0;
  /// One-sided p for mean(a - b) > 0.
  double p_greater = 0.5;
  /// Differences had zero variance; p values are 0 or 1 by the sign of the mean.
  bool degenerate = false;
};
TTest paired_t_test(std::span<const double> a, std::span<const double> b);

struct SampleMetrics {
  std::string id;
  double iou = 0.0;
  double dice = 0.0;
  double hd95 = 0.0;
  double assd = 0.0;
  double ece = 0.0;
  bool sentinel = false;
};

/// Hard threshold at 0.5 on prob_fg for the mask-based metrics.
SampleMetrics evaluate_sample(std::span<const double> prob_fg, const BinaryMask& gt, std::size_t bins = 15);

}  // namespace ugdd::metrics
