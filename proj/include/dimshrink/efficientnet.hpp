#pragma once

#include "dimshrink/backbone.hpp"

namespace dimshrink {

/// EfficientNet-B0 feature trunk (stem, seven MBConv stages, 1x1 head conv).
/// Batch norms run on stored statistics, which suits batch size 1.
///
/// Taps: block1 (stride 2, 16 ch), block2 (4, 24), block3 (8, 40),
/// block5 (16, 112), head (32, 1280).
class EfficientNetB0 : public Backbone {
 public:
  explicit EfficientNetB0(uint64_t seed);
  ~EfficientNetB0() override;

  static TapSpec tap_spec();
  const TapSpec& taps() const override { return taps_; }
  nn::NamedTensors parameters() const override;
  nn::NamedTensors buffers() const override;

 protected:
  std::vector<nn::Tensor> extract(const nn::Tensor& image) const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  TapSpec taps_;
};

}  // namespace dimshrink
