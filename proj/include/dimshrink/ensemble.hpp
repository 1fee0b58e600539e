#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "dimshrink/network.hpp"

namespace dimshrink {

class EnsembleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModalityModel {
  Modality modality;
  const SegmentationNetwork* network;
};

/// Voxelwise arithmetic mean of per-model probability maps.
ProbabilityMap mean_probabilities(std::span<const ProbabilityMap> maps);

/// Runs each model on the volume of its modality and averages the sigmoid
/// outputs. Without `allow_partial` all four modalities must be covered;
/// with it, any nonempty subset is averaged and a warning is logged.
ProbabilityMap ensemble_predict(std::span<const ModalityModel> models,
                                const std::map<Modality, Volume>& volumes,
                                bool allow_partial = false);

}  // namespace dimshrink
