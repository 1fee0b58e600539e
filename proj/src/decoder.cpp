#include "dimshrink/decoder.hpp"

namespace dimshrink {

void DecoderConfig::validate(std::size_t tap_count, std::size_t stage_count) const {
  if (channels_2d.size() + 1 != tap_count) {
    throw ConfigError("decoder: " + std::to_string(channels_2d.size()) + " 2D levels for " +
                      std::to_string(tap_count) + " backbone taps (need taps - 1)");
  }
  if (channels_3d.size() != stage_count) {
    throw ConfigError("decoder: " + std::to_string(channels_3d.size()) + " 3D levels for " +
                      std::to_string(stage_count) + " shrink stages");
  }
  if (groups < 1) throw ConfigError("decoder: groups must be positive");
  auto check = [&](int64_t c, const char* what) {
    if (c < 1 || c % groups != 0) {
      throw ConfigError(std::string("decoder: ") + what + " width " + std::to_string(c) +
                        " not divisible by " + std::to_string(groups) + " groups");
    }
  };
  for (auto c : channels_2d) check(c, "2D level");
  for (auto c : channels_3d) check(c, "3D level");
  check(bridge_channels, "bridge");
}

DecoderConfig DecoderConfig::mirrored(const TapSpec& taps, const ShrinkConfig& shrink) {
  DecoderConfig cfg;
  cfg.groups = shrink.groups;
  for (std::size_t k = 0; k + 1 < taps.size(); ++k) {
    cfg.channels_2d.push_back(taps[taps.size() - 2 - k].channels);
  }
  for (auto it = shrink.channels.rbegin(); it != shrink.channels.rend(); ++it) {
    cfg.channels_3d.push_back(*it);
  }
  cfg.bridge_channels = shrink.channels.empty() ? shrink.groups : shrink.channels.back();
  return cfg;
}

Decoder::Decoder(const DecoderConfig& cfg, const TapSpec& taps, const ShrinkConfig& shrink,
                 uint64_t seed)
    : cfg_(cfg), taps_(taps), shrink_(shrink) {
  validate_taps(taps_);
  cfg_.validate(taps_.size(), shrink_.factors.size());
  nn::Rng rng(seed);

  const std::size_t levels = taps_.size() - 1;
  int64_t in = taps_.back().channels;
  for (std::size_t k = 0; k < levels; ++k) {
    const int64_t fused = taps_[levels - 1 - k].channels;
    levels2d_.push_back(nn::ResidualBlock::make(in + fused, cfg_.channels_2d[k], cfg_.groups, true, rng));
    in = cfg_.channels_2d[k];
  }
  bridge2d_ = nn::Conv::make(in, 3 * cfg_.bridge_channels, {1, 1, 1}, nn::ConvSpec{}, true, rng);

  const std::size_t stages = shrink_.factors.size();
  const int64_t deepest_skip = stages == 0 ? 1 : shrink_.channels.back();
  bridge3d_ = nn::ResidualBlock::make(cfg_.bridge_channels + deepest_skip, cfg_.bridge_channels,
                                      cfg_.groups, false, rng);
  in = cfg_.bridge_channels;
  for (std::size_t j = 0; j < stages; ++j) {
    // Level j undoes stage (stages - 1 - j) and fuses the skip one stage shallower.
    const int64_t fused = j + 1 < stages ? shrink_.channels[stages - 2 - j] : 1;
    levels3d_.push_back(nn::ResidualBlock::make(in + fused, cfg_.channels_3d[j], cfg_.groups, false, rng));
    in = cfg_.channels_3d[j];
  }
  head_ = nn::Conv::make(in, 3, {1, 1, 1}, nn::ConvSpec{}, true, rng);
}

nn::Tensor Decoder::decode2d(const BackboneTaps& taps) const {
  if (taps.maps.size() != taps_.size()) {
    throw ConfigError("decoder: expected " + std::to_string(taps_.size()) + " taps, got " +
                      std::to_string(taps.maps.size()));
  }
  const std::size_t levels = taps_.size() - 1;
  nn::Tensor x = taps.maps.back();
  for (std::size_t k = 0; k < levels; ++k) {
    const std::size_t i = levels - 1 - k;
    const int64_t ratio = taps_[i + 1].stride / taps_[i].stride;
    x = nn::upsample(x, {1, ratio, ratio}, cfg_.upsample);
    x = levels2d_[k](nn::concat({x, taps.maps[i]}));
  }
  const int64_t s = taps_.front().stride;
  x = nn::upsample(x, {1, s, s}, cfg_.upsample);
  return bridge2d_(x);
}

nn::Tensor Decoder::decode3d_logits(const nn::Tensor& feat2d, const SkipSet3D& skips) const {
  const std::size_t stages = shrink_.factors.size();
  if (skips.stages.size() != stages) {
    throw ConfigError("decoder: expected " + std::to_string(stages) + " skips, got " +
                      std::to_string(skips.stages.size()));
  }
  if (feat2d.rank() != 4 || feat2d.dim(0) != 3 * cfg_.bridge_channels || feat2d.dim(1) != 1) {
    throw ConfigError("decoder: 2D features must be (" + std::to_string(3 * cfg_.bridge_channels) +
                      ", 1, H, W), got " + nn::to_string(feat2d.shape()));
  }
  const int64_t h = feat2d.dim(2), w = feat2d.dim(3);
  auto expect = [&](const nn::Tensor& t, int64_t depth, const std::string& what) {
    if (t.rank() != 4 || t.dim(1) != depth || t.dim(2) != h || t.dim(3) != w) {
      throw ConfigError("decoder: " + what + " has shape " + nn::to_string(t.shape()) +
                        ", expected depth " + std::to_string(depth) + " at " + std::to_string(h) +
                        "x" + std::to_string(w));
    }
  };
  expect(skips.input, shrink_.input_depth, "encoder input");
  const auto depths = shrink_.stage_depths();
  for (std::size_t i = 0; i < stages; ++i) expect(skips.stages[i], depths[i], "skip " + std::to_string(i));

  nn::Tensor x = nn::reshape(feat2d, {cfg_.bridge_channels, 3, h, w});
  x = bridge3d_(nn::concat({x, stages == 0 ? skips.input : skips.stages.back()}));
  for (std::size_t j = 0; j < stages; ++j) {
    const std::size_t stage = stages - 1 - j;
    x = nn::upsample(x, {shrink_.factors[stage], 1, 1}, cfg_.upsample);
    const nn::Tensor& skip = stage == 0 ? skips.input : skips.stages[stage - 1];
    x = levels3d_[j](nn::concat({x, skip}));
  }
  return head_(x);
}

nn::Tensor Decoder::decode3d(const nn::Tensor& feat2d, const SkipSet3D& skips) const {
  return nn::sigmoid(decode3d_logits(feat2d, skips));
}

nn::NamedTensors Decoder::parameters() const {
  nn::NamedTensors out;
  for (std::size_t k = 0; k < levels2d_.size(); ++k) {
    levels2d_[k].collect("decoder.level2d" + std::to_string(k), out);
  }
  bridge2d_.collect("decoder.bridge2d", out);
  bridge3d_.collect("decoder.bridge3d", out);
  for (std::size_t j = 0; j < levels3d_.size(); ++j) {
    levels3d_[j].collect("decoder.level3d" + std::to_string(j), out);
  }
  head_.collect("decoder.head", out);
  return out;
}

}  // namespace dimshrink
