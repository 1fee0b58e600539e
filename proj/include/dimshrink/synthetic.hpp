#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dimshrink/volume.hpp"

namespace dimshrink {

struct Ellipsoid {
  std::array<double, 3> center{};  // voxel coordinates (x, y, z)
  std::array<double, 3> radii{};

  bool contains(double x, double y, double z) const;
};

/// Three strictly nested ellipsoids in noisy background. Label 2 fills the
/// outer shell, 1 the middle shell and 4 the inner ellipsoid.
struct Phantom {
  Volume volume;
  LabelMap labels;
  uint64_t seed = 0;
  std::array<Ellipsoid, 3> regions;  // outer, middle, inner
};

inline constexpr double kPhantomNoise = 0.1;

/// Deterministic in (seed, dims). Every extent must be at least 8.
Phantom make_phantom(uint64_t seed, const Dims& dims);

/// The phantom as seen by one modality: the same regions with a
/// modality-specific intensity ordering and independent noise.
Volume phantom_modality(const Phantom& phantom, Modality modality);

/// Writes <dir>/<case_id>/<case_id>_{t1,t1ce,t2,flair}[,_seg].nii.gz.
void write_phantom_case(const std::filesystem::path& dir, const std::string& case_id,
                        const Phantom& phantom, bool with_labels = true);

/// Brute-force hard Dice by explicit voxel loops; both empty gives 1.0.
double oracle_dice(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, const Dims& dims);

}  // namespace dimshrink
