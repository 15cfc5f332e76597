#pragma once

// Model checkpoints: named weight arrays plus a JSON sidecar recording the
// architecture, so a checkpoint alone can rebuild its network.

#include <memory>
#include <string>

#include "sunet/models.hpp"

namespace sunet {

// Writes every state array (learnable tensors and batch-norm running
// buffers) to `path` and the architecture to `path + ".json"`.
void save_checkpoint(Model<float>& model, const std::string& path);

// Reads the sidecar written by save_checkpoint.
ModelSpec read_checkpoint_spec(const std::string& path);

// Rebuilds the network recorded in the sidecar and fills its state from the
// weight file. Entry names, order, and shapes must match the rebuilt model
// exactly. Pass a hierarchy to share one across models; nullptr builds it.
Model<float> load_checkpoint(const std::string& path, std::shared_ptr<const Hierarchy> hier = nullptr);

}  // namespace sunet
