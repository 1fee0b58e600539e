#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dimshrink {

/// (W, H, D) in voxels; W varies fastest in memory, matching NIfTI file order.
using Dims = std::array<int64_t, 3>;

int64_t voxel_count(const Dims& dims);
std::string to_string(const Dims& dims);

enum class Modality { kT1, kT1Gd, kT2, kFlair };

inline constexpr std::array<Modality, 4> kAllModalities{Modality::kT1, Modality::kT1Gd,
                                                        Modality::kT2, Modality::kFlair};

/// File-name tag: t1, t1ce, t2, flair.
std::string_view modality_tag(Modality m);
Modality parse_modality(std::string_view tag);

class VolumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class FileMissingError : public VolumeError {
 public:
  using VolumeError::VolumeError;
};
class HeaderError : public VolumeError {
 public:
  using VolumeError::VolumeError;
};
class DimensionalityError : public VolumeError {
 public:
  using VolumeError::VolumeError;
};
class PayloadError : public VolumeError {
 public:
  using VolumeError::VolumeError;
};
class GeometryError : public VolumeError {
 public:
  using VolumeError::VolumeError;
};
class LabelError : public VolumeError {
 public:
  using VolumeError::VolumeError;
};
class StatisticsError : public VolumeError {
 public:
  using VolumeError::VolumeError;
};

/// World-space placement carried through from the source header so outputs
/// land on the same grid.
struct Geometry {
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  double qfac = 1.0;
  int16_t qform_code = 0;
  int16_t sform_code = 0;
  std::array<double, 3> quatern{0.0, 0.0, 0.0};
  std::array<double, 3> qoffset{0.0, 0.0, 0.0};
  std::array<std::array<double, 4>, 3> srow{{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
  uint8_t xyzt_units = 0;

  /// Moves the voxel origin by `offset` voxels (negative to undo a crop).
  Geometry shifted(const std::array<double, 3>& offset) const;
};

struct Volume {
  Dims dims{0, 0, 0};
  std::vector<double> data;
  std::optional<Modality> modality;
  Dims origin_dims{0, 0, 0};
  Dims crop_offset{0, 0, 0};
  Geometry geometry;

  double at(int64_t x, int64_t y, int64_t z) const { return data[index(x, y, z)]; }
  std::size_t index(int64_t x, int64_t y, int64_t z) const {
    return static_cast<std::size_t>((z * dims[1] + y) * dims[0] + x);
  }
};

/// BraTS integer labels: 0 background, 1 necrosis/non-enhancing core,
/// 2 edema, 4 enhancing tumor.
struct LabelMap {
  Dims dims{0, 0, 0};
  std::vector<uint8_t> data;
  Dims origin_dims{0, 0, 0};
  Dims crop_offset{0, 0, 0};
  Geometry geometry;
};

bool is_valid_label(int value);
void validate(const LabelMap& labels);

/// Whole tumor, tumor core and enhancing tumor as binary channels.
struct NestedMask {
  Dims dims{0, 0, 0};
  std::vector<uint8_t> wt, tc, et;

  bool nesting_holds() const;
};

/// Three channels (WT, TC, ET) stored contiguously, each in volume order.
struct ProbabilityMap {
  Dims dims{0, 0, 0};
  std::vector<double> values;

  std::span<const double> channel(int c) const;
};

ProbabilityMap to_probabilities(const NestedMask& mask);

/// Centered crop; offset = floor((orig - target) / 2) per axis.
Volume center_crop(const Volume& vol, const Dims& target);
LabelMap center_crop(const LabelMap& labels, const Dims& target);
Dims center_crop_offset(const Dims& dims, const Dims& target);

struct ZScoreOptions {
  /// Statistics over nonzero voxels only; background stays zero.
  bool nonzero_mask = false;
};

Volume zscore_normalize(const Volume& vol, const ZScoreOptions& options = {});

NestedMask labels_to_nested(const LabelMap& labels);

/// Innermost set channel wins: ET -> 4, else TC -> 1, else WT -> 2, else 0.
LabelMap nested_to_labels(const ProbabilityMap& probs, double threshold = 0.5);

/// Places `labels` at `offset` inside a zero grid of dims `orig`.
LabelMap uncrop(const LabelMap& labels, const Dims& offset, const Dims& orig);

}  // namespace dimshrink
