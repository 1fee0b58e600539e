#include "dimshrink/efficientnet.hpp"

#include <algorithm>
#include <array>
#include <optional>

namespace dimshrink {

namespace {

using nn::Tensor;

constexpr double kBatchNormEps = 1e-3;

struct BatchNorm {
  Tensor gamma, beta, running_mean, running_var;

  static BatchNorm make(int64_t c) {
    return {Tensor::parameter({c}, std::vector<double>(c, 1.0)),
            Tensor::parameter({c}, std::vector<double>(c, 0.0)), Tensor({c}, 0.0), Tensor({c}, 1.0)};
  }
  Tensor operator()(const Tensor& x) const {
    return nn::frozen_batch_norm(x, gamma, beta, running_mean.values(), running_var.values(),
                                 kBatchNormEps);
  }
  void collect(const std::string& prefix, nn::NamedTensors& params) const {
    params.emplace_back(prefix + ".weight", gamma);
    params.emplace_back(prefix + ".bias", beta);
  }
  void collect_buffers(const std::string& prefix, nn::NamedTensors& bufs) const {
    bufs.emplace_back(prefix + ".running_mean", running_mean);
    bufs.emplace_back(prefix + ".running_var", running_var);
  }
};

nn::Conv conv2d(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t groups, bool bias,
                nn::Rng& rng) {
  nn::ConvSpec spec;
  spec.stride = {1, stride, stride};
  spec.padding = {0, k / 2, k / 2};
  spec.groups = groups;
  return nn::Conv::make(cin, cout, {1, k, k}, spec, bias, rng);
}

struct StageSpec {
  int64_t expand, kernel, stride, in, out, repeats;
};

constexpr std::array<StageSpec, 7> kStages{{{1, 3, 1, 32, 16, 1},
                                            {6, 3, 2, 16, 24, 2},
                                            {6, 5, 2, 24, 40, 2},
                                            {6, 3, 2, 40, 80, 3},
                                            {6, 5, 1, 80, 112, 3},
                                            {6, 5, 2, 112, 192, 4},
                                            {6, 3, 1, 192, 320, 1}}};

// Stage indices whose output is tapped; the head output is the final tap.
constexpr std::array<std::size_t, 4> kTappedStages{0, 1, 2, 4};

struct MBConv {
  std::optional<nn::Conv> expand_conv;
  std::optional<BatchNorm> expand_bn;
  nn::Conv dw_conv;
  BatchNorm dw_bn;
  nn::Conv se_reduce, se_expand;
  nn::Conv project_conv;
  BatchNorm project_bn;
  bool residual = false;

  MBConv(const StageSpec& s, int64_t in, int64_t stride, nn::Rng& rng) {
    const int64_t mid = in * s.expand;
    if (s.expand != 1) {
      expand_conv = conv2d(in, mid, 1, 1, 1, false, rng);
      expand_bn = BatchNorm::make(mid);
    }
    dw_conv = conv2d(mid, mid, s.kernel, stride, mid, false, rng);
    dw_bn = BatchNorm::make(mid);
    const int64_t squeezed = std::max<int64_t>(1, in / 4);
    se_reduce = conv2d(mid, squeezed, 1, 1, 1, true, rng);
    se_expand = conv2d(squeezed, mid, 1, 1, 1, true, rng);
    project_conv = conv2d(mid, s.out, 1, 1, 1, false, rng);
    project_bn = BatchNorm::make(s.out);
    residual = stride == 1 && in == s.out;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = x;
    if (expand_conv) y = nn::silu((*expand_bn)((*expand_conv)(y)));
    y = nn::silu(dw_bn(dw_conv(y)));
    Tensor gate = nn::sigmoid(se_expand(nn::silu(se_reduce(nn::global_avg_pool(y)))));
    y = nn::channel_mul(y, gate);
    y = project_bn(project_conv(y));
    return residual ? nn::add(y, x) : y;
  }

  void collect(const std::string& p, nn::NamedTensors& params) const {
    if (expand_conv) {
      expand_conv->collect(p + ".expand_conv", params);
      expand_bn->collect(p + ".expand_bn", params);
    }
    dw_conv.collect(p + ".dw_conv", params);
    dw_bn.collect(p + ".dw_bn", params);
    se_reduce.collect(p + ".se_reduce", params);
    se_expand.collect(p + ".se_expand", params);
    project_conv.collect(p + ".project_conv", params);
    project_bn.collect(p + ".project_bn", params);
  }

  void collect_buffers(const std::string& p, nn::NamedTensors& bufs) const {
    if (expand_bn) expand_bn->collect_buffers(p + ".expand_bn", bufs);
    dw_bn.collect_buffers(p + ".dw_bn", bufs);
    project_bn.collect_buffers(p + ".project_bn", bufs);
  }
};

}  // namespace

struct EfficientNetB0::Impl {
  nn::Conv stem_conv;
  BatchNorm stem_bn;
  std::vector<std::vector<MBConv>> stages;
  nn::Conv head_conv;
  BatchNorm head_bn;
};

EfficientNetB0::EfficientNetB0(uint64_t seed) : impl_(std::make_unique<Impl>()), taps_(tap_spec()) {
  nn::Rng rng(seed);
  impl_->stem_conv = conv2d(3, 32, 3, 2, 1, false, rng);
  impl_->stem_bn = BatchNorm::make(32);
  for (const auto& s : kStages) {
    std::vector<MBConv> blocks;
    for (int64_t r = 0; r < s.repeats; ++r) {
      blocks.emplace_back(s, r == 0 ? s.in : s.out, r == 0 ? s.stride : 1, rng);
    }
    impl_->stages.push_back(std::move(blocks));
  }
  impl_->head_conv = conv2d(320, 1280, 1, 1, 1, false, rng);
  impl_->head_bn = BatchNorm::make(1280);
}

EfficientNetB0::~EfficientNetB0() = default;

TapSpec EfficientNetB0::tap_spec() {
  return {{"block1", 2, 16}, {"block2", 4, 24}, {"block3", 8, 40}, {"block5", 16, 112},
          {"head", 32, 1280}};
}

std::vector<Tensor> EfficientNetB0::extract(const Tensor& image) const {
  std::vector<Tensor> taps;
  Tensor x = nn::silu(impl_->stem_bn(impl_->stem_conv(image)));
  for (std::size_t s = 0; s < impl_->stages.size(); ++s) {
    for (const auto& block : impl_->stages[s]) x = block(x);
    if (std::find(kTappedStages.begin(), kTappedStages.end(), s) != kTappedStages.end()) {
      taps.push_back(x);
    }
  }
  taps.push_back(nn::silu(impl_->head_bn(impl_->head_conv(x))));
  return taps;
}

nn::NamedTensors EfficientNetB0::parameters() const {
  nn::NamedTensors out;
  impl_->stem_conv.collect("stem.conv", out);
  impl_->stem_bn.collect("stem.bn", out);
  for (std::size_t s = 0; s < impl_->stages.size(); ++s) {
    for (std::size_t i = 0; i < impl_->stages[s].size(); ++i) {
      impl_->stages[s][i].collect("blocks." + std::to_string(s) + "." + std::to_string(i), out);
    }
  }
  impl_->head_conv.collect("head.conv", out);
  impl_->head_bn.collect("head.bn", out);
  return out;
}

nn::NamedTensors EfficientNetB0::buffers() const {
  nn::NamedTensors out;
  impl_->stem_bn.collect_buffers("stem.bn", out);
  for (std::size_t s = 0; s < impl_->stages.size(); ++s) {
    for (std::size_t i = 0; i < impl_->stages[s].size(); ++i) {
      impl_->stages[s][i].collect_buffers("blocks." + std::to_string(s) + "." + std::to_string(i), out);
    }
  }
  impl_->head_bn.collect_buffers("head.bn", out);
  return out;
}

}  // namespace dimshrink
