#pragma once

#include <cstddef>
#include <limits>

namespace ugdd::train {

/// Plateau detector over a sequence of validation losses. An epoch improves
/// when its loss is below the best so far by more than `tolerance`; the
/// first observation always improves.
class PlateauTracker {
 public:
  PlateauTracker(std::size_t patience, double tolerance);
  /// Returns true once `patience` consecutive epochs failed to improve.
  bool observe(double loss);
  std::size_t stale_epochs() const { return stale_; }
  double best() const { return best_; }
  std::size_t patience() const { return patience_; }

 private:
  std::size_t patience_;
  double tolerance_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t stale_ = 0;
};

enum class StageMode { One, Two, Auto };

/// Stage 1 -> 2 switch. Transitions are one-way.
class CurriculumController {
 public:
  CurriculumController(StageMode mode, std::size_t patience = 20, double tolerance = 1e-4,
                       std::size_t stage1_max_epochs = 0);
  int stage() const { return stage_; }
  /// Feed the validation loss of the epoch just finished; returns true when
  /// this call moved the run into stage 2.
  bool update(double val_loss);
  std::size_t epochs_in_stage() const { return epochs_in_stage_; }

 private:
  StageMode mode_;
  PlateauTracker tracker_;
  std::size_t stage1_max_;
  int stage_;
  std::size_t epochs_in_stage_ = 0;
};

}  // namespace ugdd::train
