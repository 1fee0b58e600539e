#pragma once

#include <cstdint>
#include <vector>

#include "dimshrink/backbone.hpp"
#include "dimshrink/shrink_encoder.hpp"

namespace dimshrink {

struct DecoderConfig {
  /// One width per 2D level; a level upsamples to the next shallower tap
  /// and fuses it, so there are (taps - 1) levels.
  std::vector<int64_t> channels_2d;
  /// One width per 3D level (one per shrink stage), deepest first.
  std::vector<int64_t> channels_3d;
  /// The 2D decoder ends with 3 * bridge_channels maps that are folded back
  /// into a (bridge_channels, 3, H, W) volume.
  int64_t bridge_channels = 32;
  int64_t groups = 8;
  nn::UpsampleMode upsample = nn::UpsampleMode::kNearest;

  void validate(std::size_t tap_count, std::size_t stage_count) const;
  /// Widths mirroring the encoder: each 2D level takes the width of the tap
  /// it fuses, each 3D level the width of its shrink stage.
  static DecoderConfig mirrored(const TapSpec& taps, const ShrinkConfig& shrink);
};

/// The 2D decoder over backbone taps followed by the inter-slice 3D decoder.
///
/// 3D path: fold the 2D output into depth 3, fuse the depth-3 skip, then per
/// stage (deepest first) upsample depth by that stage's factor and fuse the
/// next shallower skip; the last level fuses the encoder input. A 1x1x1
/// projection to WT/TC/ET and a sigmoid finish the network.
class Decoder {
 public:
  Decoder(const DecoderConfig& cfg, const TapSpec& taps, const ShrinkConfig& shrink, uint64_t seed);

  const DecoderConfig& config() const { return cfg_; }

  /// Returns (3 * bridge_channels, 1, H, W) at the full image resolution.
  nn::Tensor decode2d(const BackboneTaps& taps) const;
  /// Returns pre-sigmoid logits (3, D, H, W).
  nn::Tensor decode3d_logits(const nn::Tensor& feat2d, const SkipSet3D& skips) const;
  /// Returns probabilities (3, D, H, W) in channel order WT, TC, ET.
  nn::Tensor decode3d(const nn::Tensor& feat2d, const SkipSet3D& skips) const;

  nn::NamedTensors parameters() const;
  nn::Conv& head() { return head_; }

 private:
  DecoderConfig cfg_;
  TapSpec taps_;
  ShrinkConfig shrink_;
  std::vector<nn::ResidualBlock> levels2d_;
  nn::Conv bridge2d_;
  nn::ResidualBlock bridge3d_;
  std::vector<nn::ResidualBlock> levels3d_;
  nn::Conv head_;
};

}  // namespace dimshrink
