#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dimshrink/nn/layers.hpp"
#include "dimshrink/tensor_archive.hpp"

namespace dimshrink {

struct TapPoint {
  std::string name;
  int64_t stride = 1;  // power of two
  int64_t channels = 1;
};

/// Ordered shallow to deep. Strides strictly increase; the last tap is the
/// bottleneck.
using TapSpec = std::vector<TapPoint>;

void validate_taps(const TapSpec& taps);

/// One (C_i, 1, H / stride_i, W / stride_i) map per tap.
struct BackboneTaps {
  std::vector<nn::Tensor> maps;
};

class BackboneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A 2D classification network used as a multi-scale feature extractor.
/// Implementations never run their classification head.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual const TapSpec& taps() const = 0;

  /// `image` is (3, 1, H, W); H and W must be divisible by the deepest stride.
  BackboneTaps forward(const nn::Tensor& image) const;

  /// Trainable tensors, in a stable order.
  virtual nn::NamedTensors parameters() const = 0;
  /// Non-trainable state that still belongs to the weights (e.g. running
  /// batch statistics).
  virtual nn::NamedTensors buffers() const { return {}; }

 protected:
  virtual std::vector<nn::Tensor> extract(const nn::Tensor& image) const = 0;
};

/// Overwrites every parameter and buffer of `backbone` from a tensor archive.
/// Tensors under "classifier." are ignored. Returns the CRC-32 of all loaded
/// values (in parameter order) and logs it.
///
/// Throws BackboneError naming the first missing or mis-shaped tensor; the
/// backbone is left untouched in that case.
uint32_t load_pretrained(Backbone& backbone, const TensorArchive& weights);
uint32_t load_pretrained(Backbone& backbone, const std::filesystem::path& weights);

/// Writes the backbone's parameters and buffers as a weight archive
/// accepted by load_pretrained.
TensorArchive export_weights(const Backbone& backbone);

class BackboneRegistry {
 public:
  using Factory = std::function<std::unique_ptr<Backbone>(uint64_t seed)>;

  struct Entry {
    Factory factory;
    TapSpec taps;
  };

  /// Throws BackboneError on a duplicate name.
  void add(const std::string& name, Factory factory, TapSpec taps);
  bool contains(const std::string& name) const;
  const TapSpec& taps(const std::string& name) const;
  std::unique_ptr<Backbone> create(const std::string& name, uint64_t seed) const;
  std::vector<std::string> names() const;

  /// Process-wide registry holding "efficientnet-b0" and "toy-cnn". Populate
  /// at startup; lookups afterwards are read-only.
  static BackboneRegistry& global();

 private:
  std::vector<std::pair<std::string, Entry>> entries_;
};

void register_backbone(const std::string& name, BackboneRegistry::Factory factory, TapSpec taps);

}  // namespace dimshrink
