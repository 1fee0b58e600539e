#include "dimshrink/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "dimshrink/nifti.hpp"

namespace dimshrink {

bool Ellipsoid::contains(double x, double y, double z) const {
  const double dx = (x - center[0]) / radii[0];
  const double dy = (y - center[1]) / radii[1];
  const double dz = (z - center[2]) / radii[2];
  return dx * dx + dy * dy + dz * dz <= 1.0;
}

namespace {

// Intensity of background, edema, core and enhancing tumor per modality.
std::array<double, 4> levels(Modality m) {
  switch (m) {
    case Modality::kT1: return {0.0, 1.0, 2.0, 3.0};
    case Modality::kT1Gd: return {0.0, 1.0, 3.0, 2.0};
    case Modality::kT2: return {0.0, 3.0, 2.0, 1.0};
    case Modality::kFlair: return {0.0, 3.0, 1.0, 2.0};
  }
  return {0.0, 1.0, 2.0, 3.0};
}

int region_of(uint8_t label) {
  switch (label) {
    case 2: return 1;
    case 1: return 2;
    case 4: return 3;
    default: return 0;
  }
}

Volume render(const Phantom& p, Modality m, uint64_t noise_seed) {
  const auto lv = levels(m);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, kPhantomNoise);
  Volume v;
  v.dims = p.labels.dims;
  v.origin_dims = v.dims;
  v.modality = m;
  v.data.resize(p.labels.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = lv[region_of(p.labels.data[i])] + noise(rng);
  return v;
}

}  // namespace

Phantom make_phantom(uint64_t seed, const Dims& dims) {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 8) {
      throw std::invalid_argument("make_phantom: extents must be at least 8, got " + to_string(dims));
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Phantom p;
  p.seed = seed;
  Ellipsoid outer, middle, inner;
  for (int a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(dims[a]);
    const double r = extent * (0.24 + 0.096 * unit(rng));
    const double slack = std::max(0.0, extent / 2.0 - r - 1.0);
    // Integer centers keep the center voxel inside every region.
    const double c = std::floor(extent / 2.0 + (unit(rng) - 0.5) * slack);
    outer.center[a] = middle.center[a] = inner.center[a] = c;
    outer.radii[a] = r;
    inner.radii[a] = std::max(1.0, 0.3 * r);
    middle.radii[a] = std::max(inner.radii[a] + 0.75, 0.6 * r);
  }
  p.regions = {outer, middle, inner};

  LabelMap& l = p.labels;
  l.dims = dims;
  l.origin_dims = dims;
  l.data.assign(static_cast<std::size_t>(voxel_count(dims)), 0);
  for (int64_t z = 0; z < dims[2]; ++z) {
    for (int64_t y = 0; y < dims[1]; ++y) {
      for (int64_t x = 0; x < dims[0]; ++x) {
        const auto i = static_cast<std::size_t>((z * dims[1] + y) * dims[0] + x);
        const double fx = static_cast<double>(x), fy = static_cast<double>(y), fz = static_cast<double>(z);
        if (inner.contains(fx, fy, fz)) {
          l.data[i] = 4;
        } else if (middle.contains(fx, fy, fz)) {
          l.data[i] = 1;
        } else if (outer.contains(fx, fy, fz)) {
          l.data[i] = 2;
        }
      }
    }
  }
  p.volume = render(p, Modality::kT1, seed ^ 0x9e3779b97f4a7c15ULL);
  return p;
}

Volume phantom_modality(const Phantom& phantom, Modality modality) {
  if (modality == Modality::kT1) return phantom.volume;
  return render(phantom, modality, phantom.seed ^ (0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(modality)));
}

void write_phantom_case(const std::filesystem::path& dir, const std::string& case_id,
                        const Phantom& phantom, bool with_labels) {
  const auto case_dir = dir / case_id;
  std::filesystem::create_directories(case_dir);
  for (Modality m : kAllModalities) {
    save_volume(case_dir / (case_id + "_" + std::string(modality_tag(m)) + ".nii.gz"),
                phantom_modality(phantom, m));
  }
  if (with_labels) save_labels(case_dir / (case_id + "_seg.nii.gz"), phantom.labels);
}

double oracle_dice(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, const Dims& dims) {
  const auto n = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  if (a.size() != n || b.size() != n) {
    throw std::invalid_argument("oracle_dice: mask sizes do not match " + to_string(dims));
  }
  long long in_a = 0, in_b = 0, in_both = 0;
  for (int64_t z = 0; z < dims[2]; ++z) {
    for (int64_t y = 0; y < dims[1]; ++y) {
      for (int64_t x = 0; x < dims[0]; ++x) {
        const auto i = static_cast<std::size_t>(x + dims[0] * (y + dims[1] * z));
        if (a[i]) ++in_a;
        if (b[i]) ++in_b;
        if (a[i] && b[i]) ++in_both;
      }
    }
  }
  if (in_a == 0 && in_b == 0) return 1.0;
  return 2.0 * static_cast<double>(in_both) / static_cast<double>(in_a + in_b);
}

}  // namespace dimshrink
