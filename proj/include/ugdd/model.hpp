#pragma once

// Dual network plus the graph-refinement parameters, sharing one store.

#include <cstdint>

#include "ugdd/graph.hpp"
#include "ugdd/network.hpp"

namespace ugdd {

struct ModelConfig {
  BackboneConfig backbone;
  graph::GraphConfig graph;
  bool uggr = true;

  void validate() const;
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  const DualNetwork& network() const { return net_; }
  ParameterStore& params() { return net_.params(); }
  const ParameterStore& params() const { return net_.params(); }
  /// Refinement runs only with two branches.
  bool refines() const { return cfg_.uggr && net_.has_frequency_branch(); }
  const graph::UggrParams& uggr() const { return uggr_; }

  /// Refinement head := [W_s/2, W_f/2, 0, 0], bias (b_s + b_f)/2, so refined
  /// logits start as the average of the branch logits.
  void warm_start_refinement_head();

 private:
  ModelConfig cfg_;
  DualNetwork net_;
  graph::UggrParams uggr_;
};

}  // namespace ugdd
