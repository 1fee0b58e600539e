#pragma once

#include <memory>
#include <string>

#include "dimshrink/backbone.hpp"
#include "dimshrink/decoder.hpp"
#include "dimshrink/shrink_encoder.hpp"
#include "dimshrink/volume.hpp"

namespace dimshrink {

struct NetworkConfig {
  ShrinkConfig shrink;
  std::string backbone = "efficientnet-b0";
  DecoderConfig decoder;
  /// Re-normalize the compressed image with ImageNet channel statistics
  /// before the backbone.
  bool imagenet_normalize = false;
};

/// Probabilities for WT, TC and ET on the network input grid.
using SegmentationOutput = ProbabilityMap;

/// Shrink encoder -> 2D backbone -> 2D decoder -> 3D decoder.
class SegmentationNetwork {
 public:
  SegmentationNetwork(const NetworkConfig& cfg, uint64_t seed,
                      const BackboneRegistry& registry = BackboneRegistry::global());

  const NetworkConfig& config() const { return cfg_; }

  /// (1, D, H, W) -> (3, D, H, W) probabilities, recorded for autodiff.
  nn::Tensor forward(const nn::Tensor& volume) const;
  /// Same composition returning pre-sigmoid logits.
  nn::Tensor forward_logits(const nn::Tensor& volume) const;

  /// Inference on a preprocessed volume without recording gradients.
  SegmentationOutput segment(const Volume& vol) const;
  /// The three compressed channels the backbone sees, as (3, 1, H, W).
  nn::Tensor compressed_image(const Volume& vol) const;

  ShrinkEncoder& encoder() { return *encoder_; }
  const ShrinkEncoder& encoder() const { return *encoder_; }
  Backbone& backbone() { return *backbone_; }
  const Backbone& backbone() const { return *backbone_; }
  Decoder& decoder() { return *decoder_; }

  /// Trainable tensors prefixed "shrink.", "backbone." and "decoder.".
  nn::NamedTensors parameters() const;
  nn::NamedTensors backbone_parameters() const;
  nn::NamedTensors buffers() const;

  static nn::Tensor to_tensor(const Volume& vol);

 private:
  nn::Tensor backbone_input(const nn::Tensor& image) const;

  NetworkConfig cfg_;
  std::unique_ptr<ShrinkEncoder> encoder_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<Decoder> decoder_;
};

}  // namespace dimshrink
