#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "dimshrink/nn/tensor.hpp"

namespace dimshrink::nn {

using Triple = std::array<int64_t, 3>;  // (depth, height, width)

struct ConvSpec {
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
  int64_t groups = 1;
};

enum class UpsampleMode { kNearest, kLinear };

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Reductions to a single-element tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Cross-correlation of x (Cin, D, H, W) with w (Cout, Cin/groups, kd, kh, kw).
/// `bias` may be undefined.
Tensor conv(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& spec);

/// Non-overlapping max pooling; every spatial dim must be divisible by its kernel.
Tensor max_pool(const Tensor& x, const Triple& kernel);

/// Integer-factor upsampling. Linear mode is separable per axis with
/// half-pixel centers and edge clamping.
Tensor upsample(const Tensor& x, const Triple& factors, UpsampleMode mode);

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int64_t groups,
                  double eps = 1e-5);

/// Batch norm in inference form: fixed running statistics, learnable affine.
Tensor frozen_batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         std::span<const double> running_mean,
                         std::span<const double> running_var, double eps);

/// y[c] = x[c] * scale[c] + shift[c] with constant coefficients.
Tensor channel_affine(const Tensor& x, std::span<const double> scale,
                      std::span<const double> shift);

/// Concatenates along the channel axis; spatial dims must agree.
Tensor concat(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape shape);
Tensor global_avg_pool(const Tensor& x);
/// x (C, D, H, W) times per-channel gate s (C, 1, 1, 1).
Tensor channel_mul(const Tensor& x, const Tensor& s);

/// Receives every group-normalized activation (before the affine transform).
/// Test instrumentation; thread-local.
using NormObserver =
    std::function<void(std::span<const double> normalized, int64_t channels, int64_t groups)>;
void set_norm_observer(NormObserver observer);

}  // namespace dimshrink::nn
