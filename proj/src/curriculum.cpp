#include "ugdd/curriculum.hpp"

#include <cmath>

#include "ugdd/errors.hpp"

namespace ugdd::train {

PlateauTracker::PlateauTracker(std::size_t patience, double tolerance) : patience_(patience), tolerance_(tolerance) {
  if (patience == 0) throw ConfigError("patience must be >= 1");
  if (!(tolerance >= 0.0)) throw ConfigError("plateau tolerance must be >= 0");
}

bool PlateauTracker::observe(double loss) {
  if (std::isfinite(loss) && (!std::isfinite(best_) || loss < best_ - tolerance_)) {
    best_ = loss;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

CurriculumController::CurriculumController(StageMode mode, std::size_t patience, double tolerance,
                                           std::size_t stage1_max_epochs)
    : mode_(mode), tracker_(patience, tolerance), stage1_max_(stage1_max_epochs), stage_(mode == StageMode::Two ? 2 : 1) {}

bool CurriculumController::update(double val_loss) {
  ++epochs_in_stage_;
  if (mode_ != StageMode::Auto || stage_ == 2) return false;
  const bool plateau = tracker_.observe(val_loss);
  if (plateau || (stage1_max_ > 0 && epochs_in_stage_ >= stage1_max_)) {
    stage_ = 2;
    epochs_in_stage_ = 0;
    return true;
  }
  return false;
}

}  // namespace ugdd::train
