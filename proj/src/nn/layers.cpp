#include "dimshrink/nn/layers.hpp"

#include <cmath>
#include <optional>

namespace dimshrink::nn {

Conv Conv::make(int64_t in_channels, int64_t out_channels, const Triple& kernel,
                const ConvSpec& spec, bool with_bias, Rng& rng) {
  const int64_t in_per_group = in_channels / spec.groups;
  const int64_t fan_in = in_per_group * kernel[0] * kernel[1] * kernel[2];
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Shape shape{out_channels, in_per_group, kernel[0], kernel[1], kernel[2]};
  std::vector<double> w(static_cast<std::size_t>(numel(shape)));
  for (auto& v : w) v = dist(rng);
  Conv c;
  c.weight = Tensor::parameter(std::move(shape), std::move(w));
  if (with_bias) c.bias = Tensor::parameter({out_channels}, std::vector<double>(out_channels, 0.0));
  c.spec = spec;
  return c;
}

Conv Conv::same(int64_t in_channels, int64_t out_channels, const Triple& kernel, bool with_bias,
                Rng& rng) {
  ConvSpec spec;
  spec.padding = {kernel[0] / 2, kernel[1] / 2, kernel[2] / 2};
  return make(in_channels, out_channels, kernel, spec, with_bias, rng);
}

void Conv::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

void Conv::zero() {
  for (auto& v : weight.mutable_values()) v = 0.0;
  if (bias.defined()) {
    for (auto& v : bias.mutable_values()) v = 0.0;
  }
}

GroupNorm GroupNorm::make(int64_t channels, int64_t groups) {
  GroupNorm n;
  n.gamma = Tensor::parameter({channels}, std::vector<double>(channels, 1.0));
  n.beta = Tensor::parameter({channels}, std::vector<double>(channels, 0.0));
  n.groups = groups;
  return n;
}

void GroupNorm::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

ResidualBlock ResidualBlock::make(int64_t in_channels, int64_t out_channels, int64_t groups,
                                  bool planar, Rng& rng) {
  const Triple k = planar ? Triple{1, 3, 3} : Triple{3, 3, 3};
  ResidualBlock b;
  b.conv1 = Conv::same(in_channels, out_channels, k, false, rng);
  b.norm1 = GroupNorm::make(out_channels, groups);
  b.conv2 = Conv::same(out_channels, out_channels, k, false, rng);
  b.norm2 = GroupNorm::make(out_channels, groups);
  if (in_channels != out_channels) {
    b.projection = Conv::make(in_channels, out_channels, {1, 1, 1}, ConvSpec{}, false, rng);
  }
  return b;
}

Tensor ResidualBlock::operator()(const Tensor& x) const {
  Tensor y = relu(norm1(conv1(x)));
  y = relu(norm2(conv2(y)));
  return add(y, projection ? (*projection)(x) : x);
}

void ResidualBlock::collect(const std::string& prefix, NamedTensors& out) const {
  conv1.collect(prefix + ".conv1", out);
  norm1.collect(prefix + ".norm1", out);
  conv2.collect(prefix + ".conv2", out);
  norm2.collect(prefix + ".norm2", out);
  if (projection) projection->collect(prefix + ".proj", out);
}

}  // namespace dimshrink::nn
