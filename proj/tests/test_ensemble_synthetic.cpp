#include "doctest.h"

#include <random>

#include "dimshrink/ensemble.hpp"
#include "dimshrink/metrics.hpp"
#include "dimshrink/nifti.hpp"
#include "dimshrink/synthetic.hpp"
#include "support.hpp"

using namespace dimshrink;

TEST_CASE("mean of probability maps") {
  std::vector<ProbabilityMap> maps;
  for (double v : {0.2, 0.4, 0.6, 0.8}) maps.push_back({{1, 1, 1}, {v, v, v}});
  ProbabilityMap m = mean_probabilities(maps);
  for (double v : m.values) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
  maps.push_back({{2, 1, 1}, std::vector<double>(6, 0.1)});
  CHECK_THROWS_AS(mean_probabilities(maps), EnsembleError);
}

TEST_CASE("ensemble of identical models equals the single model") {
  NetworkConfig cfg = testing::toy_config().network();
  SegmentationNetwork net(cfg, 3);
  Phantom p = make_phantom(1, {32, 32, 12});
  Volume v = zscore_normalize(p.volume);
  std::map<Modality, Volume> vols;
  std::vector<ModalityModel> models;
  for (Modality m : kAllModalities) {
    vols[m] = v;
    models.push_back({m, &net});
  }
  ProbabilityMap single = net.segment(v);
  ProbabilityMap ens = ensemble_predict(models, vols);
  CHECK(ens.values == single.values);
}

TEST_CASE("ensemble contract errors and partial mode") {
  NetworkConfig cfg = testing::toy_config().network();
  SegmentationNetwork a(cfg, 1), b(cfg, 2);
  Phantom p = make_phantom(2, {32, 32, 12});
  std::map<Modality, Volume> vols{{Modality::kT1, zscore_normalize(p.volume)},
                                  {Modality::kT2, zscore_normalize(phantom_modality(p, Modality::kT2))}};
  std::vector<ModalityModel> two{{Modality::kT1, &a}, {Modality::kT2, &b}};
  CHECK_THROWS_AS(ensemble_predict(two, vols, false), EnsembleError);
  ProbabilityMap mean = ensemble_predict(two, vols, true);
  ProbabilityMap pa = a.segment(vols[Modality::kT1]), pb = b.segment(vols[Modality::kT2]);
  for (std::size_t i = 0; i < mean.values.size(); ++i) {
    CHECK(std::abs(mean.values[i] - 0.5 * (pa.values[i] + pb.values[i])) < 1e-12);
  }
  std::vector<ModalityModel> dup{{Modality::kT1, &a}, {Modality::kT1, &b}};
  CHECK_THROWS_AS(ensemble_predict(dup, vols, true), EnsembleError);
  std::vector<ModalityModel> absent{{Modality::kFlair, &a}};
  CHECK_THROWS_AS(ensemble_predict(absent, vols, true), EnsembleError);
  vols[Modality::kT2] = center_crop(vols[Modality::kT2], {32, 32, 8});
  CHECK_THROWS_AS(ensemble_predict(two, vols, true), EnsembleError);
}

TEST_CASE("phantoms are deterministic, nested and ordered by size") {
  Phantom a = make_phantom(0, {32, 32, 12}), b = make_phantom(0, {32, 32, 12});
  CHECK(a.volume.data == b.volume.data);
  CHECK(a.labels.data == b.labels.data);
  CHECK(make_phantom(1, {32, 32, 12}).labels.data != a.labels.data);
  validate(a.labels);
  NestedMask m = labels_to_nested(a.labels);
  CHECK(m.nesting_holds());
  auto count = [](const std::vector<uint8_t>& v) { return std::count(v.begin(), v.end(), 1); };
  CHECK(count(m.et) > 0);
  CHECK(count(m.et) < count(m.tc));
  CHECK(count(m.tc) < count(m.wt));
  CHECK_THROWS(make_phantom(0, {7, 32, 12}));
  for (uint64_t s = 0; s < 20; ++s) {
    NestedMask small = labels_to_nested(make_phantom(s, {8, 8, 8}).labels);
    CHECK(count(small.et) > 0);
    CHECK(count(small.et) < count(small.tc));
    CHECK(count(small.tc) < count(small.wt));
  }
}

TEST_CASE("phantom regions are separated by at least one noise sigma") {
  Phantom p = make_phantom(4, {32, 32, 12});
  for (Modality mod : kAllModalities) {
    Volume v = phantom_modality(p, mod);
    double sum[5] = {}, n[5] = {};
    for (std::size_t i = 0; i < v.data.size(); ++i) sum[p.labels.data[i]] += v.data[i], ++n[p.labels.data[i]];
    std::vector<double> means;
    for (int l : {0, 1, 2, 4}) means.push_back(sum[l] / n[l]);
    std::sort(means.begin(), means.end());
    for (std::size_t i = 1; i < means.size(); ++i) CHECK(means[i] - means[i - 1] > kPhantomNoise);
  }
}

TEST_CASE("oracle dice agrees with the metric") {
  std::mt19937_64 rng(5);
  const Dims dims{6, 5, 4};
  for (int t = 0; t < 100; ++t) {
    std::vector<uint8_t> a(120), b(120);
    const unsigned density = 1 + t % 5;
    for (int i = 0; i < 120; ++i) a[i] = rng() % density == 0, b[i] = rng() % density == 0;
    CHECK(std::abs(oracle_dice(a, b, dims) - dice_metric(a, b)) < 1e-12);
  }
  std::vector<uint8_t> ones(120, 1), zeros(120, 0);
  CHECK(oracle_dice(ones, ones, dims) == 1.0);
  CHECK(oracle_dice(ones, zeros, dims) == 0.0);
  CHECK_THROWS(oracle_dice(ones, std::vector<uint8_t>(5), dims));
}

TEST_CASE("phantom cases export to NIfTI") {
  auto dir = testing::scratch_dir("phantom_case");
  Phantom p = make_phantom(3, {16, 16, 8});
  write_phantom_case(dir, "case", p);
  for (const char* tag : {"t1", "t1ce", "t2", "flair"}) {
    Volume v = load_volume(dir / "case" / (std::string("case_") + tag + ".nii.gz"));
    CHECK(v.dims == p.labels.dims);
  }
  CHECK(load_labels(dir / "case" / "case_seg.nii.gz").data == p.labels.data);
}
