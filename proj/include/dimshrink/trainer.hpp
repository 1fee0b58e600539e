#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimshrink/checkpoint.hpp"
#include "dimshrink/losses.hpp"

namespace dimshrink {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed set of named parameters.
class Adam {
 public:
  explicit Adam(nn::NamedTensors params, AdamOptions options = {});

  /// Applies one update from the accumulated gradients scaled by
  /// `grad_scale`, then clears them.
  void step(double lr, double grad_scale = 1.0);
  void zero_grad();

  const AdamState& state() const { return state_; }
  /// Throws CheckpointError when a moment is missing or has the wrong size.
  void load_state(const AdamState& state);

 private:
  nn::NamedTensors params_;
  AdamOptions options_;
  AdamState state_;
};

/// Multiplies the learning rate by `factor` once the epoch loss has failed
/// to improve on its best value for `patience` consecutive epochs. The
/// first observed epoch only sets the best value. A plateau that would
/// exceed `max_reductions` requests a stop instead.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int64_t patience, int64_t max_reductions);

  struct Decision {
    bool reduced = false;
    bool stop = false;
  };
  Decision observe(double epoch_loss, double& lr);

  void restore(const TrainingState& s);
  void store(TrainingState& s) const;

 private:
  double factor_;
  int64_t patience_, max_reductions_;
  bool has_best_ = false;
  double best_ = 0.0;
  int64_t bad_epochs_ = 0;
  int64_t reductions_ = 0;
};

struct TrainingCase {
  std::string id;
  Volume volume;  // preprocessed to the configured crop
  NestedMask truth;
};

struct EpochLog {
  int64_t epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double dice_wt = 0.0, dice_tc = 0.0, dice_et = 0.0;
};

std::string epoch_log_header();
std::string format_epoch_log(const EpochLog& e);

class NonFiniteLossError : public nn::NonFiniteError {
 public:
  using nn::NonFiniteError::NonFiniteError;
};

struct TrainOptions {
  /// Continue from this state (epoch counter, optimizer, schedule, weights).
  std::optional<Checkpoint> resume;
  /// Appended to (or created with a header) after every epoch.
  std::optional<std::filesystem::path> log_csv;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;  // weights at the lowest epoch-mean loss
  Checkpoint last;  // state after the final epoch, for resuming
  std::vector<EpochLog> log;
  bool early_stopped = false;
};

/// Epochs of single-case steps in a seed-determined order; gradients of
/// `batch_size` consecutive cases are averaged into one Adam step.
TrainResult train(const TrainConfig& cfg, std::span<const TrainingCase> dataset,
                  const TrainOptions& options = {});

}  // namespace dimshrink
