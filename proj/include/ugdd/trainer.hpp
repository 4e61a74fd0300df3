#pragma once

// Two-pass forward (glance without uncertainty guidance, gaze with it), the
// two-stage curriculum and the optimization loop.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ugdd/curriculum.hpp"
#include "ugdd/loss.hpp"
#include "ugdd/metrics.hpp"
#include "ugdd/model.hpp"
#include "ugdd/synth.hpp"

namespace ugdd::train {

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only

  void validate() const;
};

class Optimizer {
 public:
  Optimizer(ParameterStore& params, OptimizerConfig cfg);
  /// Applies the accumulated gradients; does not clear them.
  void step();
  std::size_t steps() const { return t_; }

 private:
  ParameterStore& params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t epochs = 60;
  std::size_t patience = 20;
  std::size_t stage2_patience = 40;
  double tolerance = 1e-4;
  /// Force the switch to stage 2 after this many stage-1 epochs (0 = plateau only).
  std::size_t stage1_max_epochs = 0;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  StageMode stage = StageMode::Auto;
  /// Uncertainty for stage-2 training from the TTA ensemble rather than the plain forward.
  bool tta_in_training = true;

  void validate() const;
};

StageMode parse_stage(const std::string& s);
std::string to_string(StageMode m);

struct GlanceOutputs {
  Tensor p_s, p_f;  // TTA-mean probabilities (p_f mirrors p_s without a frequency branch)
  Tensor u_s, u_f;  // normalized entropy
  Tensor r_s, r_f;  // argmax masks
};

/// Fusion disabled, no gradients.
GlanceOutputs glance_pass(const Model& model, const Tensor& x, bool tta = true);

struct GazeOutputs {
  ag::Var p_s, p_f;  // fused branch probabilities
  ag::Var p_final;
  Tensor u_final, r_final;
  graph::RoiBox roi;
  graph::NodeSet nodes;
  bool refined = false;
};

/// Fusion guided by the glance maps, then graph refinement. Builds a graph
/// when gradients are enabled.
GazeOutputs gaze_pass(const Model& model, const Tensor& x, const GlanceOutputs& glance);

struct Inference {
  GlanceOutputs glance;
  Tensor p_final, r_final, u_final;
  graph::RoiBox roi;
  graph::NodeSet nodes;
};

Inference infer(const Model& model, const Tensor& x);

/// FNV-1a over p_final rounded to 4 decimals and the final mask.
std::uint64_t output_hash(const Inference& inf);

/// Stage-1 objective on the plain (untransformed) glance forward.
ag::Var stage1_loss(const Model& model, const synth::Sample& s, const loss::LossConfig& cfg);
/// Stage-2 objective: glance branches plus the final prediction, each with its uncertainty map.
ag::Var stage2_loss(const Model& model, const synth::Sample& s, const loss::LossConfig& cfg, bool tta);

/// One optimizer update over a batch; returns the mean loss. Throws DomainError on non-finite gradients.
double stage1_step(Model& model, Optimizer& opt, std::span<const synth::Sample> batch, const loss::LossConfig& cfg);
double stage2_step(Model& model, Optimizer& opt, std::span<const synth::Sample> batch, const loss::LossConfig& cfg,
                   bool tta);

struct EpochRecord {
  std::size_t epoch = 0;
  int stage = 1;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_iou = 0.0;
  double val_ece = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  /// Epoch after which stage 2 began (0 = never).
  std::size_t transition_epoch = 0;
  bool early_stopped = false;
  int final_stage = 1;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(Model& model, const std::vector<synth::Sample>& train_set, const std::vector<synth::Sample>& val_set,
                  const TrainConfig& cfg, const loss::LossConfig& loss_cfg, const EpochCallback& on_epoch = {});

/// epoch,stage,train_loss,val_loss,val_iou,val_ece with a "1->2" row at the transition.
std::string training_log_csv(const TrainResult& r);

struct Evaluation {
  std::vector<metrics::SampleMetrics> per_sample;
  metrics::Calibration calibration;  // pooled over every pixel
};

Evaluation evaluate(const Model& model, const std::vector<synth::Sample>& samples, std::size_t bins = 15);

}  // namespace ugdd::train
