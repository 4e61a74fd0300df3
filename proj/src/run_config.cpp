#include "ugdd/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "ugdd/errors.hpp"

namespace ugdd {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct Entry {
  const char* name;
  const char* section;
  const char* help;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_KEY(sec, key, field, help) \
  Entry{key, sec, help, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_size(k, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }}
#define REAL_KEY(sec, key, field, help) \
  Entry{key, sec, help, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }}
#define BOOL_KEY(sec, key, field, help) \
  Entry{key, sec, help, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{"seed", "run", "seed for data generation, initialization and batch order",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.synth.seed = c.train.seed = to_u64(k, v);
            },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      Entry{"size", "run", "image side in pixels, shared by the generator and the network",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.synth.size = c.model.backbone.height = c.model.backbone.width = to_size(k, v);
            },
            [](const RunConfig& c) { return fmt(c.synth.size); }},
      Entry{"channels", "run", "image channels (1 or 3)",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.synth.channels = c.model.backbone.in_channels = to_size(k, v);
            },
            [](const RunConfig& c) { return fmt(c.synth.channels); }},
      REAL_KEY("run", "val_fraction", val_fraction, "fraction of the training manifest held out for validation"),

      SIZE_KEY("synth", "count", synth.count, "number of generated samples"),
      SIZE_KEY("synth", "harmonics", synth.harmonics, "boundary perturbation harmonics"),
      REAL_KEY("synth", "max_amplitude", synth.max_amplitude, "bound on the summed relative harmonic amplitudes"),
      REAL_KEY("synth", "radius_min", synth.radius_min, "smallest mean radius as a fraction of size"),
      REAL_KEY("synth", "radius_max", synth.radius_max, "largest mean radius as a fraction of size"),
      REAL_KEY("synth", "sigma_min", synth.sigma_min, "smallest boundary blur in pixels"),
      REAL_KEY("synth", "sigma_max", synth.sigma_max, "largest boundary blur in pixels"),
      REAL_KEY("synth", "texture", synth.texture, "lesion texture amplitude"),
      REAL_KEY("synth", "noise_std", synth.noise_std, "additive pixel noise"),
      Entry{"artifacts", "synth", "artifact kinds: hair, marker, specular joined by '+', or none",
            [](RunConfig& c, const std::string&, const std::string& v) { c.synth.artifacts = synth::parse_artifacts(v); },
            [](const RunConfig& c) { return synth::artifacts_to_string(c.synth.artifacts); }},
      REAL_KEY("synth", "artifact_prob", synth.artifact_prob, "chance that each enabled artifact appears"),
      REAL_KEY("synth", "label_noise", synth.label_noise, "annotation jitter in pixels"),

      SIZE_KEY("model", "levels", model.backbone.levels, "U-Net depth"),
      SIZE_KEY("model", "base_channels", model.backbone.base_channels, "channels at the first level"),
      Entry{"dd_mode", "model", "branch pairing: single-S, S&S, F&F or S&F",
            [](RunConfig& c, const std::string&, const std::string& v) { c.model.backbone.dd_mode = parse_dd_mode(v); },
            [](const RunConfig& c) { return to_string(c.model.backbone.dd_mode); }},
      BOOL_KEY("model", "ugbff", model.backbone.ugbff, "uncertainty-guided feature fusion between branches"),
      Entry{"fusion_sites", "model", "fusion sites: all, none, coarse or a comma list such as enc1,mid,dec1",
            [](RunConfig& c, const std::string&, const std::string& v) { c.model.backbone.fusion_sites = v; },
            [](const RunConfig& c) { return c.model.backbone.fusion_sites; }},
      BOOL_KEY("model", "uggr", model.uggr, "graph refinement of the final prediction"),
      SIZE_KEY("model", "num_nodes", model.graph.num_nodes, "graph nodes per image"),
      SIZE_KEY("model", "num_queries", model.graph.num_queries, "query nodes among them"),
      SIZE_KEY("model", "knn", model.graph.knn, "spatial neighbours per node"),
      REAL_KEY("model", "tau", model.graph.tau, "attention bonus for reliable references"),

      Entry{"optimizer", "train", "adam or sgd",
            [](RunConfig& c, const std::string&, const std::string& v) { c.train.optimizer.kind = v; },
            [](const RunConfig& c) { return c.train.optimizer.kind; }},
      REAL_KEY("train", "lr", train.optimizer.lr, "learning rate"),
      REAL_KEY("train", "beta1", train.optimizer.beta1, "adam first-moment decay"),
      REAL_KEY("train", "beta2", train.optimizer.beta2, "adam second-moment decay"),
      REAL_KEY("train", "momentum", train.optimizer.momentum, "sgd momentum"),
      SIZE_KEY("train", "epochs", train.epochs, "epoch budget over both stages"),
      SIZE_KEY("train", "patience", train.patience, "plateau epochs before stage 2"),
      SIZE_KEY("train", "stage2_patience", train.stage2_patience, "plateau epochs before stopping in stage 2"),
      REAL_KEY("train", "tolerance", train.tolerance, "minimum validation-loss improvement"),
      SIZE_KEY("train", "stage1_max_epochs", train.stage1_max_epochs, "force stage 2 after this many epochs (0 = off)"),
      SIZE_KEY("train", "batch_size", train.batch_size, "samples per update"),
      Entry{"stage", "train", "1, 2 or auto",
            [](RunConfig& c, const std::string&, const std::string& v) { c.train.stage = train::parse_stage(v); },
            [](const RunConfig& c) { return train::to_string(c.train.stage); }},
      BOOL_KEY("train", "tta_in_training", train.tta_in_training, "stage-2 uncertainty from the augmented ensemble"),

      Entry{"loss", "loss", "dice, dice+ce, dice+ce+boundary or ugml",
            [](RunConfig& c, const std::string&, const std::string& v) { c.loss.variant = loss::parse_variant(v); },
            [](const RunConfig& c) { return loss::to_string(c.loss.variant); }},
      REAL_KEY("loss", "margin", loss.margin, "base margin m"),
      REAL_KEY("loss", "lambda", loss.lambda, "weight of the margin term"),
      REAL_KEY("loss", "boundary_weight", loss.boundary_weight, "weight of the boundary term"),

      SIZE_KEY("metrics", "bins", metrics.bins, "calibration bins over [0.5, 1]"),
      Entry{"hard_threshold", "metrics", "hard-sample IoU threshold, or auto for the probe mean",
            [](RunConfig& c, const std::string&, const std::string& v) { c.metrics.hard_threshold = v; },
            [](const RunConfig& c) { return c.metrics.hard_threshold; }},
  };
  return table;
}

#undef SIZE_KEY
#undef REAL_KEY
#undef BOOL_KEY

const Entry& find(const std::string& key) {
  for (const auto& e : entries())
    if (key == e.name) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

RunConfig::RunConfig() { model.backbone.fusion_sites = "coarse"; }

void RunConfig::set(const std::string& key, const std::string& value) {
  find(key).set(*this, key, trim(value));
}

std::string RunConfig::get(const std::string& key) const { return find(key).get(*this); }

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read config file " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::apply_environment() {
  if (const char* s = std::getenv("UGDD_SEED"); s && *s) {
    try {
      set("seed", s);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("UGDD_SEED: ") + e.what());
    }
  }
}

void RunConfig::validate() const {
  synth.validate(model.backbone.levels);
  model.validate();
  train.validate();
  loss.validate();
  if (metrics.bins == 0) throw ConfigError("bins must be positive");
  if (metrics.hard_threshold != "auto") {
    const double t = to_double("hard_threshold", metrics.hard_threshold);
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("hard_threshold must be auto or lie in [0,1]");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0,1)");
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  for (const auto& e : entries()) os << e.name << " = " << e.get(*this) << "\n";
  return os.str();
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    const RunConfig defaults;
    for (const auto& e : entries()) out.push_back({e.name, e.section, e.help, e.get(defaults)});
    return out;
  }();
  return keys;
}

std::string config_help() {
  std::ostringstream os;
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      section = k.section;
      os << "[" << section << "]\n";
    }
    std::string lhs = "  " + k.name + " = " + k.default_value;
    if (lhs.size() < 36) lhs.resize(36, ' ');
    os << lhs << "  " << k.help << "\n";
  }
  return os.str();
}

}  // namespace ugdd
