#include "ugdd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ugdd/errors.hpp"
#include "ugdd/uncertainty.hpp"

namespace ugdd::train {

namespace {

// Differentiable glance forward without TTA.
DualOutputs plain_forward(const Model& m, const Tensor& x) { return m.network().forward(x, nullptr, nullptr, false); }

GlanceOutputs glance_from(Tensor p_s, Tensor p_f) {
  GlanceOutputs g;
  g.u_s = uncertainty::entropy_map(p_s);
  g.r_s = uncertainty::argmax_mask(p_s);
  g.u_f = uncertainty::entropy_map(p_f);
  g.r_f = uncertainty::argmax_mask(p_f);
  g.p_s = std::move(p_s);
  g.p_f = std::move(p_f);
  return g;
}

// The stage-1 objective for a variant: the margin term needs uncertainty,
// which stage 1 does not produce, so UGML falls back to the segmentation loss.
ag::Var base_objective(const ag::Var& p, const Tensor& y, const loss::LossConfig& cfg) {
  loss::LossConfig c = cfg;
  if (c.variant == loss::Variant::Ugml) c.variant = loss::Variant::DiceCE;
  return loss::objective(p, Tensor(y.shape()), y, c);
}

void check_gradients(const ParameterStore& params) {
  for (std::size_t i = 0; i < params.tensor_count(); ++i)
    if (!params.vars()[i].grad().all_finite()) throw DomainError("non-finite gradient in '" + params.names()[i] + "'");
}

template <class LossFn>
double batch_step(Model& model, Optimizer& opt, std::span<const synth::Sample> batch, LossFn&& fn) {
  if (batch.empty()) throw ContractError("empty batch");
  model.params().zero_grad();
  double total = 0.0;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    ag::Var l = fn(s);
    total += l.value().item();
    ag::backward(ag::scale(l, w));
  }
  check_gradients(model.params());
  opt.step();
  model.params().zero_grad();
  return total * w;
}

double mean_loss(const Model& model, const std::vector<synth::Sample>& set, int stage, const loss::LossConfig& cfg, bool tta) {
  if (set.empty()) return 0.0;
  ag::NoGradGuard guard;
  double total = 0.0;
  for (const auto& s : set) total += (stage == 1 ? stage1_loss(model, s, cfg) : stage2_loss(model, s, cfg, tta)).value().item();
  return total / static_cast<double>(set.size());
}

}  // namespace

void OptimizerConfig::validate() const {
  if (kind != "adam" && kind != "sgd") throw ConfigError("optimizer must be adam or sgd");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must be in [0,1)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
}

Optimizer::Optimizer(ParameterStore& params, OptimizerConfig cfg) : params_(params), cfg_(std::move(cfg)) {
  cfg_.validate();
  for (const auto& v : params_.vars()) {
    m_.emplace_back(v.value().size(), 0.0);
    v_.emplace_back(cfg_.kind == "adam" ? v.value().size() : 0, 0.0);
  }
}

void Optimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& vars = params_.vars();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Tensor& g = vars[i].grad();
    Tensor& w = vars[i].mutable_value();
    auto& m = m_[i];
    if (cfg_.kind == "sgd") {
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = cfg_.momentum * m[j] + g[j];
        w[j] -= cfg_.lr * m[j];
      }
      continue;
    }
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      w[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
}

void TrainConfig::validate() const {
  optimizer.validate();
  if (patience == 0 || stage2_patience == 0) throw ConfigError("patience must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(tolerance >= 0.0)) throw ConfigError("plateau tolerance must be >= 0");
}

StageMode parse_stage(const std::string& s) {
  if (s == "1") return StageMode::One;
  if (s == "2") return StageMode::Two;
  if (s == "auto") return StageMode::Auto;
  throw ConfigError("stage must be 1, 2 or auto, got '" + s + "'");
}

std::string to_string(StageMode m) {
  switch (m) {
    case StageMode::One: return "1";
    case StageMode::Two: return "2";
    case StageMode::Auto: return "auto";
  }
  return "?";
}

GlanceOutputs glance_pass(const Model& model, const Tensor& x, bool tta) {
  ag::NoGradGuard guard;
  const bool dual = model.network().has_frequency_branch();
  auto forward = [&](const Tensor& v) {
    DualOutputs o = plain_forward(model, v);
    std::vector<Tensor> out{o.p_s.value()};
    if (dual) out.push_back(o.p_f.value());
    return out;
  };
  std::vector<Tensor> p = tta ? uncertainty::tta_mean(forward, x) : forward(x);
  Tensor p_f = dual ? p[1] : p[0];
  return glance_from(std::move(p[0]), std::move(p_f));
}

GazeOutputs gaze_pass(const Model& model, const Tensor& x, const GlanceOutputs& glance) {
  GazeOutputs g;
  const DualNetwork& net = model.network();
  DualOutputs o = net.forward(x, &glance.u_s, &glance.u_f, true);
  g.p_s = o.p_s;
  if (!net.has_frequency_branch()) {
    g.p_f = o.p_s;
    g.p_final = o.p_s;
  } else if (model.refines()) {
    graph::RefineInputs in{o.feat_s, o.feat_f, glance.u_s, glance.u_f, glance.r_s, glance.r_f, o.p_s, o.p_f};
    graph::RefineOutput r = graph::refine(in, model.uggr(), model.config().graph);
    g.p_f = o.p_f;
    g.p_final = r.p_final;
    g.roi = r.roi;
    g.nodes = std::move(r.nodes);
    g.refined = !r.bypassed;
  } else {
    g.p_f = o.p_f;
    g.p_final = ag::scale(ag::add(o.p_s, o.p_f), 0.5);
  }
  g.u_final = uncertainty::entropy_map(g.p_final.value());
  g.r_final = uncertainty::argmax_mask(g.p_final.value());
  return g;
}

Inference infer(const Model& model, const Tensor& x) {
  ag::NoGradGuard guard;
  Inference inf;
  inf.glance = glance_pass(model, x, true);
  GazeOutputs g = gaze_pass(model, x, inf.glance);
  inf.p_final = g.p_final.value();
  inf.r_final = std::move(g.r_final);
  inf.u_final = std::move(g.u_final);
  inf.roi = g.roi;
  inf.nodes = std::move(g.nodes);
  return inf;
}

std::uint64_t output_hash(const Inference& inf) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::int64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= static_cast<std::uint64_t>(v >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  };
  for (double p : inf.p_final.storage()) mix(std::llround(p * 1e4));
  for (double r : inf.r_final.storage()) mix(std::llround(r));
  return h;
}

ag::Var stage1_loss(const Model& model, const synth::Sample& s, const loss::LossConfig& cfg) {
  const Tensor y = s.mask.to_tensor();
  DualOutputs o = plain_forward(model, s.image);
  ag::Var l = base_objective(o.p_s, y, cfg);
  if (model.network().has_frequency_branch()) l = ag::add(l, base_objective(o.p_f, y, cfg));
  return l;
}

ag::Var stage2_loss(const Model& model, const synth::Sample& s, const loss::LossConfig& cfg, bool tta) {
  const Tensor y = s.mask.to_tensor();
  DualOutputs first = plain_forward(model, s.image);
  const bool dual = model.network().has_frequency_branch();
  GlanceOutputs glance = tta ? glance_pass(model, s.image, true)
                             : glance_from(first.p_s.value(), dual ? first.p_f.value() : first.p_s.value());
  ag::Var l = loss::objective(first.p_s, glance.u_s, y, cfg);
  if (!dual) return l;
  l = ag::add(l, loss::objective(first.p_f, glance.u_f, y, cfg));
  GazeOutputs gaze = gaze_pass(model, s.image, glance);
  return ag::add(l, loss::objective(gaze.p_final, gaze.u_final, y, cfg));
}

double stage1_step(Model& model, Optimizer& opt, std::span<const synth::Sample> batch, const loss::LossConfig& cfg) {
  return batch_step(model, opt, batch, [&](const synth::Sample& s) { return stage1_loss(model, s, cfg); });
}

double stage2_step(Model& model, Optimizer& opt, std::span<const synth::Sample> batch, const loss::LossConfig& cfg,
                   bool tta) {
  return batch_step(model, opt, batch, [&](const synth::Sample& s) { return stage2_loss(model, s, cfg, tta); });
}

TrainResult train(Model& model, const std::vector<synth::Sample>& train_set, const std::vector<synth::Sample>& val_set,
                  const TrainConfig& cfg, const loss::LossConfig& loss_cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  loss_cfg.validate();
  if (train_set.empty()) throw ContractError("training set is empty");
  Optimizer opt(model.params(), cfg.optimizer);
  CurriculumController curriculum(cfg.stage, cfg.patience, cfg.tolerance, cfg.stage1_max_epochs);
  PlateauTracker stage2_stop(cfg.stage2_patience, cfg.tolerance);
  // Without a validation split the plateau rule watches the training loss.
  const bool has_val = !val_set.empty();

  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<synth::Sample> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const int stage = curriculum.stage();
    Rng rng(derive_seed(cfg.seed, 1000 + epoch));
    rng.shuffle(order);
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) batch.push_back(train_set[order[i]]);
      total += stage == 1 ? stage1_step(model, opt, batch, loss_cfg)
                          : stage2_step(model, opt, batch, loss_cfg, cfg.tta_in_training);
      ++steps;
    }
    // The refinement head is not trained in stage 1; keep it tracking the
    // branch heads so stage-1 evaluation and the switch start from their average.
    if (stage == 1) model.warm_start_refinement_head();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage;
    rec.train_loss = total / static_cast<double>(steps);
    rec.val_loss = has_val ? mean_loss(model, val_set, stage, loss_cfg, cfg.tta_in_training) : rec.train_loss;
    if (has_val) {
      const Evaluation ev = evaluate(model, val_set);
      double iou = 0.0;
      for (const auto& m : ev.per_sample) iou += m.iou;
      rec.val_iou = iou / static_cast<double>(ev.per_sample.size());
      rec.val_ece = ev.calibration.ece;
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (stage == 1) {
      if (curriculum.update(rec.val_loss)) result.transition_epoch = epoch;
    } else if (stage2_stop.observe(rec.val_loss)) {
      result.early_stopped = true;
      break;
    }
  }
  result.final_stage = curriculum.stage();
  return result;
}

std::string training_log_csv(const TrainResult& r) {
  std::ostringstream os;
  os.precision(8);
  os << "epoch,stage,train_loss,val_loss,val_iou,val_ece\n";
  for (const auto& e : r.log) {
    os << e.epoch << "," << e.stage << "," << e.train_loss << "," << e.val_loss << "," << e.val_iou << "," << e.val_ece
       << "\n";
    if (r.transition_epoch != 0 && e.epoch == r.transition_epoch) os << e.epoch << ",1->2,,,,\n";
  }
  return os.str();
}

Evaluation evaluate(const Model& model, const std::vector<synth::Sample>& samples, std::size_t bins) {
  Evaluation ev;
  metrics::CalibrationAccumulator acc(bins);
  for (const auto& s : samples) {
    const Inference inf = infer(model, s.image);
    const Tensor fg = inf.p_final.channels(1, 1);
    metrics::SampleMetrics m = metrics::evaluate_sample(fg.storage(), s.mask, bins);
    m.id = s.meta.id;
    acc.add(fg.storage(), s.mask);
    ev.per_sample.push_back(std::move(m));
  }
  ev.calibration = acc.result();
  return ev;
}

}  // namespace ugdd::train
