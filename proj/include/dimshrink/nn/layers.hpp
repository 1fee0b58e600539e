#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dimshrink/nn/ops.hpp"
#include "dimshrink/nn/tensor.hpp"

namespace dimshrink::nn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
using Rng = std::mt19937_64;

/// He-normal initialized weights, zero bias.
struct Conv {
  Tensor weight;
  Tensor bias;  // may be undefined
  ConvSpec spec;

  static Conv make(int64_t in_channels, int64_t out_channels, const Triple& kernel,
                   const ConvSpec& spec, bool with_bias, Rng& rng);
  /// "Same" padding for odd kernels.
  static Conv same(int64_t in_channels, int64_t out_channels, const Triple& kernel, bool with_bias,
                   Rng& rng);

  Tensor operator()(const Tensor& x) const { return conv(x, weight, bias, spec); }
  void collect(const std::string& prefix, NamedTensors& out) const;
  void zero();
};

struct GroupNorm {
  Tensor gamma;
  Tensor beta;
  int64_t groups = 1;

  static GroupNorm make(int64_t channels, int64_t groups);
  Tensor operator()(const Tensor& x) const { return group_norm(x, gamma, beta, groups); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// conv -> GN -> ReLU -> conv -> GN -> ReLU, plus identity or 1x1 projected
/// shortcut. No activation after the add.
struct ResidualBlock {
  Conv conv1, conv2;
  GroupNorm norm1, norm2;
  std::optional<Conv> projection;

  /// `planar` selects (1, 3, 3) kernels for 2D maps instead of (3, 3, 3).
  static ResidualBlock make(int64_t in_channels, int64_t out_channels, int64_t groups, bool planar,
                            Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

}  // namespace dimshrink::nn
