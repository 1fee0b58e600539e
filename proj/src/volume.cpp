#include "dimshrink/volume.hpp"

#include <algorithm>
#include <cmath>

namespace dimshrink {

int64_t voxel_count(const Dims& dims) { return dims[0] * dims[1] * dims[2]; }

std::string to_string(const Dims& dims) {
  return std::to_string(dims[0]) + "x" + std::to_string(dims[1]) + "x" + std::to_string(dims[2]);
}

std::string_view modality_tag(Modality m) {
  switch (m) {
    case Modality::kT1: return "t1";
    case Modality::kT1Gd: return "t1ce";
    case Modality::kT2: return "t2";
    case Modality::kFlair: return "flair";
  }
  return "?";
}

Modality parse_modality(std::string_view tag) {
  for (auto m : kAllModalities) {
    if (modality_tag(m) == tag) return m;
  }
  throw std::invalid_argument("unknown modality '" + std::string(tag) +
                              "' (expected t1, t1ce, t2 or flair)");
}

Geometry Geometry::shifted(const std::array<double, 3>& offset) const {
  Geometry g = *this;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) g.srow[r][3] += srow[r][c] * offset[c];
  }
  const double b = quatern[0], c = quatern[1], d = quatern[2];
  const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
  const double rot[3][3] = {
      {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
      {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
      {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}};
  const double step[3] = {spacing[0] * offset[0], spacing[1] * offset[1],
                          spacing[2] * offset[2] * (qfac < 0 ? -1.0 : 1.0)};
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) g.qoffset[r] += rot[r][k] * step[k];
  }
  return g;
}

bool is_valid_label(int value) { return value == 0 || value == 1 || value == 2 || value == 4; }

void validate(const LabelMap& labels) {
  if (static_cast<int64_t>(labels.data.size()) != voxel_count(labels.dims)) {
    throw LabelError("label map holds " + std::to_string(labels.data.size()) +
                     " voxels but dims are " + to_string(labels.dims));
  }
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    if (!is_valid_label(labels.data[i])) {
      throw LabelError("unexpected label value " + std::to_string(labels.data[i]) +
                       " at voxel " + std::to_string(i));
    }
  }
}

bool NestedMask::nesting_holds() const {
  for (std::size_t i = 0; i < wt.size(); ++i) {
    if ((et[i] && !tc[i]) || (tc[i] && !wt[i])) return false;
  }
  return true;
}

std::span<const double> ProbabilityMap::channel(int c) const {
  const auto n = static_cast<std::size_t>(voxel_count(dims));
  return std::span<const double>(values).subspan(static_cast<std::size_t>(c) * n, n);
}

ProbabilityMap to_probabilities(const NestedMask& mask) {
  ProbabilityMap p;
  p.dims = mask.dims;
  p.values.reserve(mask.wt.size() * 3);
  for (const auto* ch : {&mask.wt, &mask.tc, &mask.et}) {
    for (auto v : *ch) p.values.push_back(v ? 1.0 : 0.0);
  }
  return p;
}

Dims center_crop_offset(const Dims& dims, const Dims& target) {
  Dims offset{};
  for (int a = 0; a < 3; ++a) {
    if (target[a] <= 0 || target[a] > dims[a]) {
      throw GeometryError("crop target " + to_string(target) + " exceeds input dims " +
                          to_string(dims));
    }
    offset[a] = (dims[a] - target[a]) / 2;
  }
  return offset;
}

namespace {

template <typename T>
std::vector<T> copy_block(const std::vector<T>& src, const Dims& src_dims, const Dims& offset,
                          const Dims& size) {
  std::vector<T> out(static_cast<std::size_t>(voxel_count(size)));
  auto it = out.begin();
  for (int64_t z = 0; z < size[2]; ++z) {
    for (int64_t y = 0; y < size[1]; ++y) {
      const auto start = ((z + offset[2]) * src_dims[1] + (y + offset[1])) * src_dims[0] + offset[0];
      it = std::copy_n(src.begin() + start, size[0], it);
    }
  }
  return out;
}

std::array<double, 3> as_double(const Dims& d, double sign) {
  return {sign * static_cast<double>(d[0]), sign * static_cast<double>(d[1]),
          sign * static_cast<double>(d[2])};
}

}  // namespace

Volume center_crop(const Volume& vol, const Dims& target) {
  const Dims offset = center_crop_offset(vol.dims, target);
  Volume out;
  out.dims = target;
  out.data = copy_block(vol.data, vol.dims, offset, target);
  out.modality = vol.modality;
  out.origin_dims = vol.origin_dims;
  for (int a = 0; a < 3; ++a) out.crop_offset[a] = vol.crop_offset[a] + offset[a];
  out.geometry = vol.geometry.shifted(as_double(offset, 1.0));
  return out;
}

LabelMap center_crop(const LabelMap& labels, const Dims& target) {
  const Dims offset = center_crop_offset(labels.dims, target);
  LabelMap out;
  out.dims = target;
  out.data = copy_block(labels.data, labels.dims, offset, target);
  out.origin_dims = labels.origin_dims;
  for (int a = 0; a < 3; ++a) out.crop_offset[a] = labels.crop_offset[a] + offset[a];
  out.geometry = labels.geometry.shifted(as_double(offset, 1.0));
  return out;
}

Volume zscore_normalize(const Volume& vol, const ZScoreOptions& options) {
  auto in_region = [&](double v) { return !options.nonzero_mask || v != 0.0; };
  std::size_t count = 0;
  double lo = 0.0, hi = 0.0, total = 0.0;
  for (double v : vol.data) {
    if (!in_region(v)) continue;
    if (count == 0) lo = hi = v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    total += v;
    ++count;
  }
  if (count < 2 || lo == hi) {
    throw StatisticsError("cannot normalize: statistics region has fewer than two distinct values");
  }
  const double mu = total / static_cast<double>(count);
  double var = 0.0;
  for (double v : vol.data) {
    if (in_region(v)) var += (v - mu) * (v - mu);
  }
  const double sigma = std::sqrt(var / static_cast<double>(count));
  Volume out = vol;
  for (double& v : out.data) {
    if (in_region(v)) v = (v - mu) / sigma;
  }
  return out;
}

NestedMask labels_to_nested(const LabelMap& labels) {
  validate(labels);
  NestedMask m;
  m.dims = labels.dims;
  const auto n = labels.data.size();
  m.wt.resize(n);
  m.tc.resize(n);
  m.et.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = labels.data[i];
    m.wt[i] = v != 0;
    m.tc[i] = v == 1 || v == 4;
    m.et[i] = v == 4;
  }
  return m;
}

LabelMap nested_to_labels(const ProbabilityMap& probs, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
  const auto n = static_cast<std::size_t>(voxel_count(probs.dims));
  if (probs.values.size() != 3 * n) {
    throw GeometryError("probability map must hold 3 channels of " + std::to_string(n) + " voxels");
  }
  auto wt = probs.channel(0), tc = probs.channel(1), et = probs.channel(2);
  LabelMap out;
  out.dims = probs.dims;
  out.origin_dims = probs.dims;
  out.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (et[i] > threshold) {
      out.data[i] = 4;
    } else if (tc[i] > threshold) {
      out.data[i] = 1;
    } else if (wt[i] > threshold) {
      out.data[i] = 2;
    } else {
      out.data[i] = 0;
    }
  }
  return out;
}

LabelMap uncrop(const LabelMap& labels, const Dims& offset, const Dims& orig) {
  for (int a = 0; a < 3; ++a) {
    if (offset[a] < 0 || labels.dims[a] + offset[a] > orig[a]) {
      throw GeometryError("cropped block " + to_string(labels.dims) + " at offset " +
                          to_string(offset) + " does not fit in " + to_string(orig));
    }
  }
  LabelMap out;
  out.dims = orig;
  out.origin_dims = orig;
  out.data.assign(static_cast<std::size_t>(voxel_count(orig)), 0);
  auto src = labels.data.begin();
  for (int64_t z = 0; z < labels.dims[2]; ++z) {
    for (int64_t y = 0; y < labels.dims[1]; ++y) {
      const auto start = ((z + offset[2]) * orig[1] + (y + offset[1])) * orig[0] + offset[0];
      std::copy_n(src, labels.dims[0], out.data.begin() + start);
      src += labels.dims[0];
    }
  }
  out.geometry = labels.geometry.shifted(as_double(offset, -1.0));
  return out;
}

}  // namespace dimshrink
