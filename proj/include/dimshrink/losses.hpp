#pragma once

#include <array>
#include <span>

#include "dimshrink/nn/tensor.hpp"
#include "dimshrink/volume.hpp"

namespace dimshrink {

inline constexpr double kDefaultDiceEps = 1e-5;

/// Soft Dice score 2 sum(t p) / (sum(t^2) + sum(p^2) + eps). Higher is better.
double soft_dice(std::span<const double> pred, std::span<const double> truth,
                 double eps = kDefaultDiceEps);

/// Differentiable soft Dice of a prediction tensor against a constant target
/// with the same element count. Returns a single-element tensor.
nn::Tensor soft_dice(const nn::Tensor& pred, std::span<const double> truth,
                     double eps = kDefaultDiceEps);

/// total = cross_entropy - soft_dice, where cross_entropy is binary cross
/// entropy averaged over voxels and the three channels and soft_dice is the
/// mean of the per-channel scores. Minimizing total maximizes overlap.
struct LossValue {
  double total = 0.0;
  double cross_entropy = 0.0;
  double soft_dice = 0.0;
  std::array<double, 3> soft_dice_per_channel{};  // WT, TC, ET
  nn::Tensor graph;                               // differentiable total
};

/// `probs` is (3, D, H, W) with values in [0, 1], channel order WT, TC, ET.
LossValue combined_loss(const nn::Tensor& probs, const NestedMask& truth,
                        double eps = kDefaultDiceEps);

}  // namespace dimshrink
