#pragma once

// Merged run configuration for the command-line tool. Sources, lowest to
// highest precedence: built-in defaults, a flat `key = value` file, the
// UGDD_SEED environment variable, explicit flags.

#include <string>
#include <vector>

#include "ugdd/loss.hpp"
#include "ugdd/model.hpp"
#include "ugdd/synth.hpp"
#include "ugdd/trainer.hpp"

namespace ugdd {

struct MetricsConfig {
  std::size_t bins = 15;
  /// "auto" (mean IoU of the probe) or a number in [0,1].
  std::string hard_threshold = "auto";
};

struct RunConfig {
  synth::SynthConfig synth;
  ModelConfig model;
  train::TrainConfig train;
  loss::LossConfig loss;
  MetricsConfig metrics;
  double val_fraction = 0.2;

  RunConfig();

  /// Throws ConfigError naming the key; unknown keys are rejected.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// Applies a config file. Blank lines and text after '#' are ignored.
  void load_file(const std::string& path);
  /// Uses UGDD_SEED when set.
  void apply_environment();
  void validate() const;

  /// Every key as `key = value`, one per line, in table order.
  std::string dump() const;
};

struct ConfigKey {
  std::string name;
  std::string section;
  std::string help;
  std::string default_value;
};

/// All recognized keys with their documented defaults.
const std::vector<ConfigKey>& config_keys();

/// `key = value` lines grouped by section, for --help.
std::string config_help();

}  // namespace ugdd
