#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "dimshrink/network.hpp"
#include "dimshrink/tensor_archive.hpp"
#include "dimshrink/train_config.hpp"

namespace dimshrink {

inline constexpr int kCheckpointFormatVersion = 1;

/// Optimizer moments keyed by parameter name, plus the step count used for
/// bias correction.
struct AdamState {
  int64_t step = 0;
  std::map<std::string, std::vector<double>> m, v;
};

struct TrainingState {
  int64_t epoch = 0;  // last completed epoch
  int64_t steps = 0;  // optimizer steps taken
  double lr = 1e-4;
  double best_loss = 0.0;
  bool has_best = false;
  int64_t bad_epochs = 0;
  int64_t reductions = 0;
};

/// Self-describing snapshot: the config is enough to rebuild the network the
/// weights belong to.
struct Checkpoint {
  TrainConfig config;
  TrainingState state;
  std::map<std::string, StoredTensor> weights;  // parameters and buffers
  AdamState adam;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Copies the network's current parameters and buffers.
std::map<std::string, StoredTensor> snapshot_weights(const SegmentationNetwork& net);

/// Overwrites every parameter and buffer. Throws CheckpointError naming the
/// first missing or mis-shaped tensor.
void restore_weights(SegmentationNetwork& net, const std::map<std::string, StoredTensor>& weights);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the network described by the checkpoint's config and loads its weights.
std::unique_ptr<SegmentationNetwork> build_network(const Checkpoint& ckpt);

}  // namespace dimshrink
