#pragma once

// Checkpoint layout: the line "UGDDCKPT", one line of JSON describing the
// model configuration and every tensor (name, shape, offset), then all
// tensors as little-endian float32 in header order.

#include <string>

#include "ugdd/model.hpp"

namespace ugdd {

inline constexpr const char* kCheckpointMagic = "UGDDCKPT";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
  int stage_reached = 1;
  std::size_t epochs = 0;
};

void save_checkpoint(const std::string& path, const Model& model, const CheckpointInfo& info = {});
/// Throws IngestionError on a malformed file or a tensor that does not match the rebuilt model.
Model load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr);
/// Configuration only, without reading tensor data.
ModelConfig read_checkpoint_config(const std::string& path);

}  // namespace ugdd
