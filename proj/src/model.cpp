#include "ugdd/model.hpp"

#include "ugdd/errors.hpp"

namespace ugdd {

void ModelConfig::validate() const {
  backbone.validate();
  if (graph.num_nodes < 2) throw ConfigError("graph.nodes must be at least 2");
  if (graph.num_queries == 0 || graph.num_queries >= graph.num_nodes)
    throw ConfigError("graph.queries must be in [1, graph.nodes)");
  if (graph.knn == 0) throw ConfigError("graph.knn must be >= 1");
  if (!(graph.tau >= 0.0)) throw ConfigError("graph.tau must be >= 0");
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), net_(cfg.backbone, seed) {
  cfg_.validate();
  if (refines()) {
    Rng rng(derive_seed(seed, 0x6772));
    const std::size_t dim = 2 * cfg_.backbone.channels_at(0) + 2;
    uggr_ = graph::make_uggr(net_.params(), "g", dim, cfg_.backbone.num_classes, rng);
    warm_start_refinement_head();
  }
}

void Model::warm_start_refinement_head() {
  if (!refines()) return;
  const std::size_t c0 = cfg_.backbone.channels_at(0), K = cfg_.backbone.num_classes;
  const Tensor& ws = params().get("s.head.w").value();
  const Tensor& wf = params().get("f.head.w").value();
  const Tensor& bs = params().get("s.head.b").value();
  const Tensor& bf = params().get("f.head.b").value();
  Tensor& hw = uggr_.head_w.mutable_value();
  Tensor& hb = uggr_.head_b.mutable_value();
  hw.fill(0.0);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t c = 0; c < c0; ++c) {
      hw.at(k, c, 0, 0) = 0.5 * ws.at(k, c, 0, 0);
      hw.at(k, c0 + c, 0, 0) = 0.5 * wf.at(k, c, 0, 0);
    }
    hb.at(0, k, 0, 0) = 0.5 * (bs.at(0, k, 0, 0) + bf.at(0, k, 0, 0));
  }
}

}  // namespace ugdd
