// ugdd: generate | train | eval | infer | report
//
// Exit codes: 0 success, 1 internal error, 2 usage or input error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ugdd/checkpoint.hpp"
#include "ugdd/dataset.hpp"
#include "ugdd/errors.hpp"
#include "ugdd/image_io.hpp"
#include "ugdd/report.hpp"
#include "ugdd/run_config.hpp"
#include "ugdd/trainer.hpp"

namespace fs = std::filesystem;
using namespace ugdd;

namespace {

// Usage and input problems map to exit code 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.config_file, "flat key = value file");
  cmd->add_option("--set", f.sets, "override one key, as key=value (repeatable)");
  cmd->add_option("--seed", f.seed, "run seed (overrides UGDD_SEED and the file)");
  cmd->footer("Configuration keys and defaults:\n" + config_help());
}

// defaults < file < UGDD_SEED < --set < dedicated flags (applied by the caller afterwards)
RunConfig build_config(const ConfigFlags& f) {
  RunConfig cfg;
  if (!f.config_file.empty()) cfg.load_file(f.config_file);
  cfg.apply_environment();
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cfg.set("seed", std::to_string(*f.seed));
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IngestionError("cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

double fg_prob(const Tensor& p, std::size_t i) {
  const std::size_t hw = p.shape()[2] * p.shape()[3];
  return p[hw + i];
}

Tensor fg_channel(const Tensor& p) {
  const std::size_t h = p.shape()[2], w = p.shape()[3];
  Tensor out(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < h * w; ++i) out[i] = fg_prob(p, i);
  return out;
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
  ConfigFlags cfg;
  std::string out = "data";
  std::optional<std::size_t> count;
};

int run_generate(const GenerateArgs& a) {
  RunConfig cfg = build_config(a.cfg);
  if (a.count) cfg.set("count", std::to_string(*a.count));
  cfg.validate();
  const auto samples = synth::generate(cfg.synth);
  const std::string manifest = data::write_dataset(a.out, samples);
  report::write_text(join(a.out, "config.txt"), cfg.dump());
  std::cout << "wrote " << samples.size() << " samples to " << manifest << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  ConfigFlags cfg;
  std::string data;
  std::string out = "run";
  std::optional<std::size_t> epochs;
  std::optional<std::string> stage, loss, dd_mode;
  bool no_ugbff = false, no_uggr = false;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = build_config(a.cfg);
  if (a.epochs) cfg.set("epochs", std::to_string(*a.epochs));
  if (a.stage) cfg.set("stage", *a.stage);
  if (a.loss) cfg.set("loss", *a.loss);
  if (a.dd_mode) cfg.set("dd_mode", *a.dd_mode);
  if (a.no_ugbff) cfg.set("ugbff", "false");
  if (a.no_uggr) cfg.set("uggr", "false");
  cfg.validate();

  if (!fs::exists(a.data)) throw InputError("manifest not found: " + a.data);
  const auto samples = data::load_dataset(a.data, cfg.synth.size, cfg.synth.channels);
  if (samples.empty()) throw InputError("manifest has no samples: " + a.data);

  const auto parts = data::split(samples.size(), {1.0 - cfg.val_fraction, cfg.val_fraction, 0.0}, cfg.train.seed);
  auto train_set = data::select(samples, parts.train);
  auto val_set = data::select(samples, parts.val);
  if (train_set.empty()) throw InputError("training split is empty");
  const bool val_is_train = val_set.empty();
  if (val_is_train) val_set = train_set;

  ensure_dir(a.out);
  std::ofstream log(join(a.out, "run.log"), std::ios::binary);
  if (!log) throw IngestionError("cannot write " + join(a.out, "run.log"));
  log << "# ugdd train\n" << cfg.dump();
  log << "# samples: " << train_set.size() << " train, " << (val_is_train ? 0 : val_set.size()) << " validation"
      << (val_is_train ? " (validating on the training split)" : "") << "\n";
  report::write_text(join(a.out, "config.txt"), cfg.dump());

  Model model(cfg.model, cfg.train.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train::train(model, train_set, val_set, cfg.train, cfg.loss, [&](const train::EpochRecord& r) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu stage %d train %.6f val %.6f iou %.4f ece %.4f", r.epoch, r.stage,
                  r.train_loss, r.val_loss, r.val_iou, r.val_ece);
    log << line << "\n";
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << line << "  [" << static_cast<long>(secs) << " s]\n";
  });
  if (result.transition_epoch) log << "# stage 1 -> 2 after epoch " << result.transition_epoch << "\n";
  if (result.early_stopped) log << "# early stop\n";

  save_checkpoint(join(a.out, "model.ckpt"), model, {result.final_stage, result.log.size()});
  report::write_text(join(a.out, "train_log.csv"), train::training_log_csv(result));
  if (!result.log.empty()) std::cout << "final train loss " << result.log.back().train_loss << "\n";
  std::cout << "checkpoint " << join(a.out, "model.ckpt") << "\n";
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, out = "eval", probe, hard_threshold = "auto";
  std::size_t bins = 15;
  bool gt_as_prediction = false;
};

int run_eval(const EvalArgs& a) {
  if (!a.gt_as_prediction && a.checkpoint.empty()) throw InputError("--checkpoint is required");
  if (!fs::exists(a.data)) throw InputError("manifest not found: " + a.data);
  if (a.bins == 0) throw InputError("--bins must be positive");
  const auto rows = data::read_manifest(a.data);
  if (rows.empty()) throw InputError("manifest has no samples: " + a.data);

  std::optional<Model> model;
  std::size_t size = 0, channels = 0;
  if (a.gt_as_prediction) {
    const auto first = io::read_png(rows.front().image, 3);
    size = first.height;
    channels = 3;
  } else {
    model.emplace(load_checkpoint(a.checkpoint));
    const auto& bb = model->config().backbone;
    size = bb.height;
    channels = bb.in_channels;
  }
  for (const auto& r : rows) {
    const auto img = io::read_png(r.image, channels);
    if (img.height != size || img.width != size)
      throw InputError("input size mismatch: " + r.image + " is " + std::to_string(img.height) + "x" +
                       std::to_string(img.width) + ", expected " + std::to_string(size) + "x" + std::to_string(size));
  }
  const auto samples = data::load_dataset(a.data, size, channels);

  train::Evaluation ev;
  if (model) {
    ev = train::evaluate(*model, samples, a.bins);
  } else {
    metrics::CalibrationAccumulator acc(a.bins);
    for (const auto& s : samples) {
      const Tensor t = s.mask.to_tensor();
      auto m = metrics::evaluate_sample(t.storage(), s.mask, a.bins);
      m.id = s.meta.id;
      ev.per_sample.push_back(m);
      acc.add(t.storage(), s.mask);
    }
    ev.calibration = acc.result();
  }

  // Hard subset: probe IoU below the threshold. Without --probe the evaluated model is its own probe.
  std::vector<double> probe_iou;
  std::string source = a.probe.empty() ? "self" : a.probe;
  if (a.probe.empty()) {
    for (const auto& m : ev.per_sample) probe_iou.push_back(m.iou);
  } else {
    std::map<std::string, double> by_id;
    for (const auto& m : report::parse_per_sample_csv(report::read_text(a.probe))) by_id[m.id] = m.iou;
    for (const auto& m : ev.per_sample) {
      auto it = by_id.find(m.id);
      if (it == by_id.end()) throw InputError("probe has no row for sample " + m.id);
      probe_iou.push_back(it->second);
    }
  }
  double threshold = 0.0;
  if (a.hard_threshold == "auto") {
    threshold = metrics::summarize(probe_iou).mean;
    source = "auto mean probe iou (" + source + ")";
  } else {
    RunConfig check;
    check.set("hard_threshold", a.hard_threshold);
    check.validate();
    threshold = std::stod(a.hard_threshold);
  }
  std::vector<bool> hard(probe_iou.size(), false);
  for (auto i : metrics::hard_sample_filter(probe_iou, threshold)) hard[i] = true;

  ensure_dir(a.out);
  report::write_text(join(a.out, "per_sample.csv"), report::per_sample_csv(ev.per_sample));
  report::write_text(join(a.out, "aggregate.csv"), report::aggregate_csv(ev.per_sample, ev.calibration));
  report::write_text(join(a.out, "bins.csv"), report::bins_csv(ev.calibration));
  report::write_text(join(a.out, "hard.csv"), report::hard_csv(ev.per_sample, hard, threshold, source));

  std::vector<double> iou;
  for (const auto& m : ev.per_sample) iou.push_back(m.iou);
  std::cout << "samples " << ev.per_sample.size() << "  mean iou " << metrics::summarize(iou).mean << "  ece "
            << ev.calibration.ece << "  hard " << std::count(hard.begin(), hard.end(), true) << "\n";
  return 0;
}

// ---- infer ------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, image, out = "infer";
  bool prob = false;
};

int run_infer(const InferArgs& a) {
  const Model model = load_checkpoint(a.checkpoint);
  const auto& bb = model.config().backbone;
  io::Image8 img;
  try {
    img = io::read_png(a.image, bb.in_channels);
  } catch (const IngestionError& e) {
    throw InputError(e.what());
  }
  Tensor x = io::from_image8(img);
  if (img.height != bb.height || img.width != bb.width) x = io::resize_bilinear(x, bb.height, bb.width);

  const auto inf = train::infer(model, x);
  ensure_dir(a.out);
  const std::string stem = fs::path(a.image).stem().string();
  io::write_png(join(a.out, stem + "_mask.png"), io::mask_to_image8(BinaryMask::from_tensor(inf.r_final)));
  io::write_png(join(a.out, stem + "_uncertainty.png"), io::to_image8(inf.u_final));
  if (a.prob) io::write_png(join(a.out, stem + "_prob.png"), io::to_image8(fg_channel(inf.p_final)));
  std::cout << "wrote " << join(a.out, stem + "_mask.png") << "\n";
  return 0;
}

// ---- report -----------------------------------------------------------------

struct ReportArgs {
  std::string bins, svg, summary;
};

int run_report(const ReportArgs& a) {
  std::vector<metrics::ReliabilityBin> bins;
  try {
    bins = report::parse_bins_csv(report::read_text(a.bins));
  } catch (const IngestionError& e) {
    throw InputError(a.bins + ": " + e.what());
  }
  const std::string svg = a.svg.empty() ? (fs::path(a.bins).parent_path() / "reliability.svg").string() : a.svg;
  report::write_text(svg, report::reliability_svg(bins));
  const std::string text = report::summary_text(bins);
  if (!a.summary.empty()) report::write_text(a.summary, text);
  std::cout << text << "svg = " << svg << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-guided dual-domain lesion segmentation on synthetic data"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic dataset (images, masks, manifest.csv)");
  add_config_flags(g, gen.cfg);
  g->add_option("--out", gen.out, "output directory")->capture_default_str();
  g->add_option("--count", gen.count, "number of samples (default 200)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model; writes model.ckpt, train_log.csv and run.log");
  add_config_flags(t, tr.cfg);
  t->add_option("--data", tr.data, "dataset manifest")->required();
  t->add_option("--out", tr.out, "output directory")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "epoch budget");
  t->add_option("--stage", tr.stage, "1, 2 or auto");
  t->add_option("--loss", tr.loss, "dice, dice+ce, dice+ce+boundary or ugml");
  t->add_option("--dd-mode", tr.dd_mode, "single-S, S&S, F&F or S&F");
  t->add_flag("--no-ugbff", tr.no_ugbff, "disable feature fusion");
  t->add_flag("--no-uggr", tr.no_uggr, "disable graph refinement");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint; writes per_sample, aggregate, bins and hard CSVs");
  e->add_option("--checkpoint", ev.checkpoint, "model checkpoint");
  e->add_option("--data", ev.data, "dataset manifest")->required();
  e->add_option("--out", ev.out, "output directory")->capture_default_str();
  e->add_option("--bins", ev.bins, "calibration bins")->capture_default_str();
  e->add_option("--hard-threshold", ev.hard_threshold, "auto (mean probe IoU) or a value in [0,1]")
      ->capture_default_str();
  e->add_option("--probe", ev.probe, "per_sample.csv of the probe model used to pick hard samples");
  e->add_flag("--ground-truth-as-prediction", ev.gt_as_prediction, "score the masks against themselves");

  InferArgs in;
  auto* i = app.add_subcommand("infer", "segment one image; writes mask and uncertainty PNGs");
  i->add_option("--checkpoint", in.checkpoint, "model checkpoint")->required();
  i->add_option("--image", in.image, "input PNG")->required();
  i->add_option("--out", in.out, "output directory")->capture_default_str();
  i->add_flag("--prob", in.prob, "also write the foreground probability PNG");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "reliability diagram SVG and summary from bins.csv");
  r->add_option("--bins", rep.bins, "bins.csv from eval")->required();
  r->add_option("--svg", rep.svg, "output SVG (default: reliability.svg next to the bins)");
  r->add_option("--summary", rep.summary, "also write the summary text here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*i) return run_infer(in);
    if (*r) return run_report(rep);
  } catch (const InputError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return 2;
  } catch (const IngestionError& ex) {
    std::cerr << "input error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "internal error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
