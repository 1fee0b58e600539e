#include "dimshrink/losses.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace dimshrink {

namespace {

constexpr double kLogFloor = 1e-12;

struct DiceTerms {
  double overlap = 0.0, truth_sq = 0.0, pred_sq = 0.0;
};

DiceTerms dice_terms(std::span<const double> pred, std::span<const double> truth) {
  DiceTerms t;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    t.overlap += truth[i] * pred[i];
    t.truth_sq += truth[i] * truth[i];
    t.pred_sq += pred[i] * pred[i];
  }
  return t;
}

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument("soft_dice: prediction has " + std::to_string(a) +
                                " elements, truth has " + std::to_string(b));
  }
}

void check_eps(double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("soft_dice: eps must be positive");
}

// d(score)/d(pred_i) for the soft Dice score.
double dice_grad(const DiceTerms& t, double eps, double truth_i, double pred_i) {
  const double den = t.truth_sq + t.pred_sq + eps;
  return 2.0 * truth_i / den - 4.0 * t.overlap * pred_i / (den * den);
}

double bce(double t, double p) {
  double loss = 0.0;
  if (t > 0.0) loss -= t * std::log(std::max(p, kLogFloor));
  if (t < 1.0) loss -= (1.0 - t) * std::log(std::max(1.0 - p, kLogFloor));
  return loss;
}

// Zero where the floor is active, matching the clamped forward value.
double bce_grad(double t, double p) {
  double g = 0.0;
  if (t > 0.0 && p > kLogFloor) g -= t / p;
  if (t < 1.0 && 1.0 - p > kLogFloor) g += (1.0 - t) / (1.0 - p);
  return g;
}

}  // namespace

double soft_dice(std::span<const double> pred, std::span<const double> truth, double eps) {
  check_sizes(pred.size(), truth.size());
  check_eps(eps);
  const DiceTerms t = dice_terms(pred, truth);
  return 2.0 * t.overlap / (t.truth_sq + t.pred_sq + eps);
}

nn::Tensor soft_dice(const nn::Tensor& pred, std::span<const double> truth, double eps) {
  check_sizes(static_cast<std::size_t>(pred.numel()), truth.size());
  check_eps(eps);
  const DiceTerms t = dice_terms(pred.values(), truth);
  const double score = 2.0 * t.overlap / (t.truth_sq + t.pred_sq + eps);
  auto target = std::make_shared<std::vector<double>>(truth.begin(), truth.end());
  auto pn = pred.node();
  return nn::make_op({1}, {score}, {pred}, [pn, target, t, eps](nn::detail::Node& self) {
    if (!pn->requires_grad) return;
    auto& g = pn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[0] * dice_grad(t, eps, (*target)[i], pn->value[i]);
    }
  });
}

LossValue combined_loss(const nn::Tensor& probs, const NestedMask& truth, double eps) {
  check_eps(eps);
  const auto n = static_cast<std::size_t>(voxel_count(truth.dims));
  if (probs.rank() != 4 || probs.dim(0) != 3 || static_cast<std::size_t>(probs.numel()) != 3 * n ||
      probs.dim(1) != truth.dims[2] || probs.dim(2) != truth.dims[1] || probs.dim(3) != truth.dims[0]) {
    throw std::invalid_argument("combined_loss: prediction " + nn::to_string(probs.shape()) +
                                " does not match truth " + to_string(truth.dims));
  }
  if (!truth.nesting_holds()) throw std::invalid_argument("combined_loss: truth violates WT/TC/ET nesting");
  const auto p = probs.values();
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("combined_loss: probabilities must lie in [0, 1]");
    }
  }

  auto target = std::make_shared<std::vector<double>>(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    (*target)[i] = truth.wt[i];
    (*target)[n + i] = truth.tc[i];
    (*target)[2 * n + i] = truth.et[i];
  }

  LossValue out;
  std::array<DiceTerms, 3> terms;
  double ce = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::span<const double> pc = p.subspan(c * n, n);
    std::span<const double> tc(target->data() + c * n, n);
    terms[c] = dice_terms(pc, tc);
    out.soft_dice_per_channel[c] = 2.0 * terms[c].overlap / (terms[c].truth_sq + terms[c].pred_sq + eps);
    for (std::size_t i = 0; i < n; ++i) ce += bce(tc[i], pc[i]);
  }
  out.cross_entropy = ce / static_cast<double>(3 * n);
  out.soft_dice = (out.soft_dice_per_channel[0] + out.soft_dice_per_channel[1] +
                   out.soft_dice_per_channel[2]) / 3.0;
  out.total = out.cross_entropy - out.soft_dice;

  auto pn = probs.node();
  out.graph = nn::make_op({1}, {out.total}, {probs}, [pn, target, terms, eps, n](nn::detail::Node& self) {
    if (!pn->requires_grad) return;
    auto& g = pn->ensure_grad();
    const double ce_scale = 1.0 / static_cast<double>(3 * n);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = c * n + i;
        const double t = (*target)[k], v = pn->value[k];
        g[k] += self.grad[0] * (ce_scale * bce_grad(t, v) - dice_grad(terms[c], eps, t, v) / 3.0);
      }
    }
  });
  return out;
}

}  // namespace dimshrink
