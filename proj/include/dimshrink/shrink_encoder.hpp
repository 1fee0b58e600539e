#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dimshrink/nn/layers.hpp"

namespace dimshrink {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Depth-reduction schedule of the inter-slice encoder. Stage i pools depth
/// by factors[i] and has channels[i] features; the product of all factors
/// must bring input_depth down to exactly 3.
struct ShrinkConfig {
  std::vector<int64_t> factors{3, 3, 4};
  std::vector<int64_t> channels{32, 64, 128};
  int64_t groups = 8;
  int64_t input_depth = 108;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  std::vector<int64_t> stage_depths() const;
};

/// Per-stage feature volumes (C_i, D_i, H, W) with strictly decreasing
/// depth, plus the encoder input itself as the full-depth level.
struct SkipSet3D {
  nn::Tensor input;
  std::vector<nn::Tensor> stages;
};

struct ShrinkResult {
  nn::Tensor image;  // (3, 1, H, W)
  SkipSet3D skips;
};

class ShrinkEncoder {
 public:
  /// Parameters drawn deterministically from `seed`.
  ShrinkEncoder(const ShrinkConfig& cfg, uint64_t seed);

  const ShrinkConfig& config() const { return cfg_; }

  /// `volume` is (1, D, H, W) with D == input_depth. The depth-3 output of
  /// the 1x1x1 collapse is read as the channel axis of a 2D image.
  ShrinkResult forward(const nn::Tensor& volume) const;

  nn::NamedTensors parameters() const;
  /// Zeroes the final Cn -> 1 projection.
  void zero_collapse();

 private:
  ShrinkConfig cfg_;
  std::vector<nn::ResidualBlock> stages_;
  nn::Conv collapse_;
};

}  // namespace dimshrink
