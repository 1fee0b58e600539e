#include "dimshrink/network.hpp"

#include <array>

namespace dimshrink {

namespace {
constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};
}  // namespace

SegmentationNetwork::SegmentationNetwork(const NetworkConfig& cfg, uint64_t seed,
                                         const BackboneRegistry& registry)
    : cfg_(cfg) {
  encoder_ = std::make_unique<ShrinkEncoder>(cfg_.shrink, seed);
  backbone_ = registry.create(cfg_.backbone, seed + 1);
  decoder_ = std::make_unique<Decoder>(cfg_.decoder, backbone_->taps(), cfg_.shrink, seed + 2);
}

nn::Tensor SegmentationNetwork::backbone_input(const nn::Tensor& image) const {
  if (!cfg_.imagenet_normalize) return image;
  std::array<double, 3> scale{}, shift{};
  for (int c = 0; c < 3; ++c) {
    scale[c] = 1.0 / kImageNetStd[c];
    shift[c] = -kImageNetMean[c] / kImageNetStd[c];
  }
  return nn::channel_affine(image, scale, shift);
}

nn::Tensor SegmentationNetwork::forward_logits(const nn::Tensor& volume) const {
  ShrinkResult shrunk = encoder_->forward(volume);
  BackboneTaps taps = backbone_->forward(backbone_input(shrunk.image));
  nn::Tensor feat = decoder_->decode2d(taps);
  return decoder_->decode3d_logits(feat, shrunk.skips);
}

nn::Tensor SegmentationNetwork::forward(const nn::Tensor& volume) const {
  return nn::sigmoid(forward_logits(volume));
}

nn::Tensor SegmentationNetwork::to_tensor(const Volume& vol) {
  return nn::Tensor({1, vol.dims[2], vol.dims[1], vol.dims[0]}, vol.data);
}

SegmentationOutput SegmentationNetwork::segment(const Volume& vol) const {
  nn::NoGradGuard no_grad;
  nn::Tensor probs = forward(to_tensor(vol));
  SegmentationOutput out;
  out.dims = vol.dims;
  out.values.assign(probs.values().begin(), probs.values().end());
  return out;
}

nn::Tensor SegmentationNetwork::compressed_image(const Volume& vol) const {
  nn::NoGradGuard no_grad;
  return encoder_->forward(to_tensor(vol)).image;
}

nn::NamedTensors SegmentationNetwork::parameters() const {
  nn::NamedTensors out = encoder_->parameters();
  for (auto& p : backbone_parameters()) out.push_back(std::move(p));
  for (auto& p : decoder_->parameters()) out.push_back(std::move(p));
  return out;
}

nn::NamedTensors SegmentationNetwork::backbone_parameters() const {
  nn::NamedTensors out;
  for (auto& [name, t] : backbone_->parameters()) out.emplace_back("backbone." + name, t);
  return out;
}

nn::NamedTensors SegmentationNetwork::buffers() const {
  nn::NamedTensors out;
  for (auto& [name, t] : backbone_->buffers()) out.emplace_back("backbone." + name, t);
  return out;
}

}  // namespace dimshrink
