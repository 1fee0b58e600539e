#pragma once

#include <array>

#include "dimshrink/backbone.hpp"

namespace dimshrink {

/// Three stride-2 conv/GN/ReLU layers tapped at strides 2, 4 and 8. Small
/// enough to train end to end on desk-scale phantoms.
class ToyCnn : public Backbone {
 public:
  explicit ToyCnn(uint64_t seed, std::array<int64_t, 3> widths = {8, 16, 32});

  static TapSpec tap_spec(std::array<int64_t, 3> widths = {8, 16, 32});
  const TapSpec& taps() const override { return taps_; }
  nn::NamedTensors parameters() const override;

 protected:
  std::vector<nn::Tensor> extract(const nn::Tensor& image) const override;

 private:
  TapSpec taps_;
  std::vector<nn::Conv> convs_;
  std::vector<nn::GroupNorm> norms_;
};

}  // namespace dimshrink
