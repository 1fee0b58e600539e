#include "dimshrink/ensemble.hpp"

#include <set>

#include <spdlog/spdlog.h>

namespace dimshrink {

ProbabilityMap mean_probabilities(std::span<const ProbabilityMap> maps) {
  if (maps.empty()) throw EnsembleError("ensemble: no probability maps");
  ProbabilityMap out;
  out.dims = maps.front().dims;
  out.values.assign(maps.front().values.size(), 0.0);
  for (const auto& m : maps) {
    if (m.dims != out.dims || m.values.size() != out.values.size()) {
      throw EnsembleError("ensemble: map " + to_string(m.dims) + " does not match " + to_string(out.dims));
    }
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += m.values[i];
  }
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (double& v : out.values) v *= inv;
  return out;
}

ProbabilityMap ensemble_predict(std::span<const ModalityModel> models,
                                const std::map<Modality, Volume>& volumes, bool allow_partial) {
  if (models.empty()) throw EnsembleError("ensemble: no models");
  std::set<Modality> covered;
  for (const auto& m : models) {
    if (m.network == nullptr) throw EnsembleError("ensemble: null model");
    if (!covered.insert(m.modality).second) {
      throw EnsembleError("ensemble: two models for modality " + std::string(modality_tag(m.modality)));
    }
    if (!volumes.count(m.modality)) {
      throw EnsembleError("ensemble: no volume for modality " + std::string(modality_tag(m.modality)));
    }
  }
  const Dims dims = volumes.at(models.front().modality).dims;
  for (const auto& [mod, vol] : volumes) {
    if (vol.dims != dims) {
      throw EnsembleError("ensemble: " + std::string(modality_tag(mod)) + " volume is " +
                          to_string(vol.dims) + ", expected " + to_string(dims));
    }
  }
  if (covered.size() < kAllModalities.size()) {
    std::string missing;
    for (Modality m : kAllModalities) {
      if (!covered.count(m)) missing += (missing.empty() ? "" : ", ") + std::string(modality_tag(m));
    }
    if (!allow_partial) throw EnsembleError("ensemble: missing models for " + missing);
    spdlog::warn("ensemble over {} of 4 modalities (missing {})", covered.size(), missing);
  }
  std::vector<ProbabilityMap> maps;
  for (const auto& m : models) maps.push_back(m.network->segment(volumes.at(m.modality)));
  return mean_probabilities(maps);
}

}  // namespace dimshrink
