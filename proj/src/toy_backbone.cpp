#include "dimshrink/toy_backbone.hpp"

#include <numeric>

namespace dimshrink {

ToyCnn::ToyCnn(uint64_t seed, std::array<int64_t, 3> widths) : taps_(tap_spec(widths)) {
  nn::Rng rng(seed);
  int64_t in = 3;
  for (auto w : widths) {
    nn::ConvSpec spec;
    spec.stride = {1, 2, 2};
    spec.padding = {0, 1, 1};
    convs_.push_back(nn::Conv::make(in, w, {1, 3, 3}, spec, true, rng));
    norms_.push_back(nn::GroupNorm::make(w, std::gcd<int64_t>(w, 4)));
    in = w;
  }
}

TapSpec ToyCnn::tap_spec(std::array<int64_t, 3> widths) {
  return {{"layer1", 2, widths[0]}, {"layer2", 4, widths[1]}, {"layer3", 8, widths[2]}};
}

std::vector<nn::Tensor> ToyCnn::extract(const nn::Tensor& image) const {
  std::vector<nn::Tensor> taps;
  nn::Tensor x = image;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = nn::relu(norms_[i](convs_[i](x)));
    taps.push_back(x);
  }
  return taps;
}

nn::NamedTensors ToyCnn::parameters() const {
  nn::NamedTensors out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect("layer" + std::to_string(i + 1) + ".conv", out);
    norms_[i].collect("layer" + std::to_string(i + 1) + ".norm", out);
  }
  return out;
}

}  // namespace dimshrink
