#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dimshrink/nn/ops.hpp"
#include "dimshrink/train_config.hpp"

namespace testing {

using dimshrink::nn::Shape;
using dimshrink::nn::Tensor;

inline std::vector<double> random_values(std::size_t n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline Tensor random_tensor(Shape shape, uint64_t seed, bool param = false) {
  auto v = random_values(static_cast<std::size_t>(dimshrink::nn::numel(shape)), seed);
  return param ? Tensor::parameter(shape, v) : Tensor(shape, v);
}

/// Largest relative error between the autodiff gradient of `loss` with
/// respect to `x` and central differences, over the given entries.
inline double gradient_error(const std::function<Tensor()>& loss, Tensor x,
                             const std::vector<std::size_t>& entries, double h = 1e-6) {
  x.zero_grad();
  loss().backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  double worst = 0.0;
  for (std::size_t i : entries) {
    auto w = x.mutable_values();
    const double keep = w[i];
    w[i] = keep + h;
    const double up = loss().item();
    w[i] = keep - h;
    const double down = loss().item();
    w[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / (std::abs(fd) + 1e-8));
  }
  return worst;
}

inline std::vector<std::size_t> sample_entries(std::size_t n, std::size_t count, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = pick(rng);
  return out;
}

/// Small network over 32x32x12 volumes with the toy backbone.
inline dimshrink::TrainConfig toy_config() {
  dimshrink::TrainConfig c;
  c.crop = {32, 32, 12};
  c.shrink.factors = {2, 2};
  c.shrink.channels = {8, 8};
  c.shrink.groups = 4;
  c.decoder.bridge_channels = 8;
  c.decoder.groups = 4;
  c.backbone = "toy-cnn";
  c.lr = 3e-3;
  return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dimshrink_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
