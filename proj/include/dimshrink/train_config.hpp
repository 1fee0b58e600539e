#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dimshrink/network.hpp"
#include "dimshrink/volume.hpp"

namespace dimshrink {

/// Everything needed to rebuild and train one modality network. Serialized
/// as JSON; keys use the field names below, nested for "shrink" and
/// "decoder". Decoder widths left empty (or 0) are mirrored from the
/// encoder and backbone.
struct TrainConfig {
  Dims crop{192, 160, 108};

  struct Shrink {
    std::vector<int64_t> factors{3, 3, 4};
    std::vector<int64_t> channels{32, 64, 128};
    int64_t groups = 8;
  } shrink;

  struct Decoder {
    std::vector<int64_t> channels_2d;
    std::vector<int64_t> channels_3d;
    int64_t bridge_channels = 0;
    int64_t groups = 0;
    std::string upsample = "nearest";
  } decoder;

  std::string backbone = "efficientnet-b0";
  std::string backbone_weights;
  bool freeze_backbone = false;
  bool imagenet_normalize = false;

  double lr = 1e-4;
  double plateau_factor = 0.1;
  int64_t plateau_patience = 50;
  int64_t max_reductions = 2;
  int64_t batch_size = 1;
  int64_t max_epochs = 300;
  int64_t max_steps = 0;  // optimizer steps; 0 means no limit
  Modality modality = Modality::kT1;
  uint64_t seed = 0;
  double eps = 1e-5;

  /// Throws ConfigError on the first invalid field.
  void validate() const;
  /// Resolves mirrored decoder widths against the backbone registry.
  NetworkConfig network(const BackboneRegistry& registry = BackboneRegistry::global()) const;

  std::string to_json() const;
  /// Throws ConfigError naming any unknown or mistyped key.
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);

  /// Applies "dotted.key=value"; the value is parsed as JSON when possible,
  /// otherwise taken as a string.
  void apply_override(const std::string& assignment);
};

}  // namespace dimshrink
