#include "dimshrink/shrink_encoder.hpp"

#include <cmath>

namespace dimshrink {

void ShrinkConfig::validate() const {
  if (factors.size() != channels.size()) {
    throw ConfigError("shrink: " + std::to_string(factors.size()) + " factors but " +
                      std::to_string(channels.size()) + " channel widths");
  }
  if (groups < 1) throw ConfigError("shrink: groups must be positive");
  int64_t product = 1;
  for (auto f : factors) {
    if (f < 1) throw ConfigError("shrink: depth factors must be positive");
    product *= f;
  }
  for (auto c : channels) {
    if (c < 1 || c % groups != 0) {
      throw ConfigError("shrink: channel width " + std::to_string(c) + " not divisible by " +
                        std::to_string(groups) + " groups");
    }
  }
  if (input_depth % product != 0 || input_depth / product != 3) {
    throw ConfigError("shrink: depth " + std::to_string(input_depth) +
                      " does not reduce to 3 with factor product " + std::to_string(product));
  }
}

std::vector<int64_t> ShrinkConfig::stage_depths() const {
  std::vector<int64_t> depths;
  int64_t d = input_depth;
  for (auto f : factors) depths.push_back(d /= f);
  return depths;
}

ShrinkEncoder::ShrinkEncoder(const ShrinkConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng(seed);
  int64_t in = 1;
  for (auto c : cfg_.channels) {
    stages_.push_back(nn::ResidualBlock::make(in, c, cfg_.groups, false, rng));
    in = c;
  }
  collapse_ = nn::Conv::make(in, 1, {1, 1, 1}, nn::ConvSpec{}, true, rng);
}

ShrinkResult ShrinkEncoder::forward(const nn::Tensor& volume) const {
  if (volume.rank() != 4 || volume.dim(0) != 1 || volume.dim(1) != cfg_.input_depth) {
    throw ConfigError("shrink: expected input (1, " + std::to_string(cfg_.input_depth) +
                      ", H, W), got " + nn::to_string(volume.shape()));
  }
  const int64_t h = volume.dim(2), w = volume.dim(3);
  ShrinkResult out;
  out.skips.input = volume;
  nn::Tensor x = volume;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    x = nn::max_pool(stages_[i](x), {cfg_.factors[i], 1, 1});
    if (x.dim(2) != h || x.dim(3) != w) throw std::logic_error("shrink stage altered W or H");
    out.skips.stages.push_back(x);
  }
  nn::Tensor collapsed = collapse_(x);  // (1, 3, H, W)
  out.image = nn::reshape(collapsed, {3, 1, h, w});
  for (double v : out.image.values()) {
    if (!std::isfinite(v)) throw nn::NonFiniteError("shrink: non-finite activation in encoder output");
  }
  return out;
}

nn::NamedTensors ShrinkEncoder::parameters() const {
  nn::NamedTensors out;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    stages_[i].collect("shrink.stage" + std::to_string(i), out);
  }
  collapse_.collect("shrink.collapse", out);
  return out;
}

void ShrinkEncoder::zero_collapse() { collapse_.zero(); }

}  // namespace dimshrink
