#include "doctest.h"

#include "dimshrink/efficientnet.hpp"
#include "dimshrink/network.hpp"
#include "dimshrink/toy_backbone.hpp"
#include "support.hpp"

using namespace dimshrink;
using nn::Shape;
using nn::Tensor;
using testing::random_tensor;

TEST_CASE("shrink config stage depths and validation") {
  ShrinkConfig c;
  CHECK(c.stage_depths() == std::vector<int64_t>{36, 12, 3});
  c.validate();

  ShrinkConfig bad = c;
  bad.factors = {3, 3, 3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);  // 108 / 27 = 4
  bad = c;
  bad.channels = {32, 64};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.channels = {30, 64, 128};
  CHECK_THROWS_AS(bad.validate(), ConfigError);  // not divisible by 8 groups
  bad = c;
  bad.factors = {5, 3, 4};
  bad.input_depth = 107;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  ShrinkConfig none;
  none.factors = {};
  none.channels = {};
  none.input_depth = 3;
  none.validate();
  CHECK(none.stage_depths().empty());
}

TEST_CASE("shrink encoder shapes and skips") {
  ShrinkConfig c;
  c.factors = {2, 2};
  c.channels = {4, 8};
  c.groups = 2;
  c.input_depth = 12;
  ShrinkEncoder enc(c, 1);
  ShrinkResult r = enc.forward(random_tensor({1, 12, 8, 6}, 2));
  CHECK(r.image.shape() == Shape{3, 1, 8, 6});
  REQUIRE(r.skips.stages.size() == 2);
  CHECK(r.skips.input.shape() == Shape{1, 12, 8, 6});
  CHECK(r.skips.stages[0].shape() == Shape{4, 6, 8, 6});
  CHECK(r.skips.stages[1].shape() == Shape{8, 3, 8, 6});
  CHECK_THROWS(enc.forward(random_tensor({1, 10, 8, 6}, 3)));
  CHECK_THROWS(enc.forward(random_tensor({2, 12, 8, 6}, 3)));
}

TEST_CASE("shrink encoder output is exactly the collapsed depth-3 map") {
  ShrinkConfig c;
  c.factors = {};
  c.channels = {};
  c.groups = 1;
  c.input_depth = 3;
  ShrinkEncoder enc(c, 1);
  enc.zero_collapse();
  auto params = enc.parameters();
  // With a zero projection only the bias survives.
  ShrinkResult r = enc.forward(random_tensor({1, 3, 4, 4}, 4));
  for (double v : r.image.values()) CHECK(v == 0.0);
  bool named = false;
  for (auto& [n, t] : params) named |= n == "shrink.collapse.weight";
  CHECK(named);
}

TEST_CASE("group norm in the encoder sees batch-free statistics") {
  // Every observed group-normalized slab has zero mean and unit variance.
  std::vector<std::pair<double, double>> stats;
  nn::set_norm_observer([&](std::span<const double> v, int64_t channels, int64_t groups) {
    const std::size_t per = v.size() / static_cast<std::size_t>(groups);
    for (int64_t g = 0; g < groups; ++g) {
      double m = 0, s = 0;
      for (std::size_t i = 0; i < per; ++i) m += v[g * per + i];
      m /= static_cast<double>(per);
      for (std::size_t i = 0; i < per; ++i) s += (v[g * per + i] - m) * (v[g * per + i] - m);
      stats.emplace_back(m, s / static_cast<double>(per));
    }
    (void)channels;
  });
  ShrinkConfig c;
  c.factors = {3};
  c.channels = {4};
  c.groups = 2;
  c.input_depth = 9;
  ShrinkEncoder(c, 5).forward(random_tensor({1, 9, 4, 4}, 6));
  nn::set_norm_observer(nullptr);
  REQUIRE(!stats.empty());
  for (auto [m, v] : stats) {
    CHECK(std::abs(m) < 1e-9);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("toy backbone taps") {
  ToyCnn toy(1);
  auto taps = toy.forward(random_tensor({3, 1, 32, 16}, 7));
  REQUIRE(taps.maps.size() == 3);
  CHECK(taps.maps[0].shape() == Shape{8, 1, 16, 8});
  CHECK(taps.maps[1].shape() == Shape{16, 1, 8, 4});
  CHECK(taps.maps[2].shape() == Shape{32, 1, 4, 2});
  CHECK_THROWS(toy.forward(random_tensor({3, 1, 30, 16}, 7)));
  CHECK_THROWS(toy.forward(random_tensor({1, 1, 32, 16}, 7)));
}

TEST_CASE("EfficientNet-B0 taps on a 64x64 image") {
  EfficientNetB0 b0(3);
  const auto& spec = b0.taps();
  REQUIRE(spec.size() == 5);
  const int64_t strides[] = {2, 4, 8, 16, 32};
  const int64_t channels[] = {16, 24, 40, 112, 1280};
  for (int i = 0; i < 5; ++i) {
    CHECK(spec[i].stride == strides[i]);
    CHECK(spec[i].channels == channels[i]);
  }
  nn::NoGradGuard no_grad;
  auto taps = b0.forward(random_tensor({3, 1, 64, 64}, 8));
  for (int i = 0; i < 5; ++i) {
    CHECK(taps.maps[i].shape() == Shape{channels[i], 1, 64 / strides[i], 64 / strides[i]});
  }
  std::size_t count = 0;
  for (auto& [n, t] : b0.parameters()) count += static_cast<std::size_t>(t.numel());
  // Feature trunk without the 1280 x 1000 classifier.
  CHECK(count > 3'900'000);
  CHECK(count < 4'100'000);
}

TEST_CASE("pretrained weights load, checksum and refuse bad archives") {
  ToyCnn src(10), dst(11);
  TensorArchive ar = export_weights(src);
  ar.tensors["classifier.weight"] = StoredTensor{{2, 2}, {1, 2, 3, 4}};
  const uint32_t crc = load_pretrained(dst, ar);
  auto a = src.parameters(), b = dst.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::vector<double>(a[i].second.values().begin(), a[i].second.values().end()) ==
          std::vector<double>(b[i].second.values().begin(), b[i].second.values().end()));
  }
  CHECK(load_pretrained(dst, ar) == crc);

  ToyCnn fresh(12);
  const std::vector<double> before(fresh.parameters()[0].second.values().begin(),
                                   fresh.parameters()[0].second.values().end());
  TensorArchive missing = ar;
  missing.tensors.erase("layer2.norm.gamma");
  try {
    load_pretrained(fresh, missing);
    FAIL("expected an error");
  } catch (const BackboneError& e) {
    CHECK(std::string(e.what()).find("layer2.norm.gamma") != std::string::npos);
  }
  TensorArchive wrong = ar;
  wrong.tensors["layer1.conv.weight"].shape = {1, 2, 3};
  CHECK_THROWS_AS(load_pretrained(fresh, wrong), BackboneError);
  CHECK(std::vector<double>(fresh.parameters()[0].second.values().begin(),
                            fresh.parameters()[0].second.values().end()) == before);
}

TEST_CASE("registry") {
  auto& reg = BackboneRegistry::global();
  CHECK(reg.contains("efficientnet-b0"));
  CHECK(reg.contains("toy-cnn"));
  CHECK_THROWS_AS(reg.add("toy-cnn", [](uint64_t s) { return std::make_unique<ToyCnn>(s); }, ToyCnn::tap_spec()),
                  BackboneError);
  CHECK_THROWS(reg.create("resnet-50", 0));

  BackboneRegistry local;
  local.add("tiny", [](uint64_t s) { return std::make_unique<ToyCnn>(s, std::array<int64_t, 3>{4, 4, 4}); },
            ToyCnn::tap_spec({4, 4, 4}));
  auto b = local.create("tiny", 0);
  CHECK(b->taps().back().channels == 4);
}

TEST_CASE("decoder config validation and mirroring") {
  ShrinkConfig s;
  TapSpec taps = ToyCnn::tap_spec();
  DecoderConfig d = DecoderConfig::mirrored(taps, s);
  CHECK(d.channels_2d == std::vector<int64_t>{16, 8});
  CHECK(d.channels_3d == std::vector<int64_t>{128, 64, 32});
  d.validate(taps.size(), s.factors.size());
  DecoderConfig bad = d;
  bad.channels_2d = {16};
  CHECK_THROWS_AS(bad.validate(taps.size(), 3), ConfigError);
  bad = d;
  bad.channels_3d = {128, 64};
  CHECK_THROWS_AS(bad.validate(taps.size(), 3), ConfigError);
  bad = d;
  bad.bridge_channels = 7;
  CHECK_THROWS_AS(bad.validate(taps.size(), 3), ConfigError);
}

TEST_CASE("network shapes through every stage") {
  NetworkConfig cfg = testing::toy_config().network();
  SegmentationNetwork net(cfg, 0);
  Tensor x = random_tensor({1, 12, 32, 32}, 9);
  ShrinkResult shrunk = net.encoder().forward(x);
  CHECK(shrunk.image.shape() == Shape{3, 1, 32, 32});
  auto taps = net.backbone().forward(shrunk.image);
  Tensor feat = net.decoder().decode2d(taps);
  CHECK(feat.shape() == Shape{24, 1, 32, 32});
  Tensor probs = net.forward(x);
  CHECK(probs.shape() == Shape{3, 12, 32, 32});
  for (double p : probs.values()) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("network rejects malformed inputs") {
  SegmentationNetwork net(testing::toy_config().network(), 0);
  CHECK_THROWS(net.forward(random_tensor({1, 12, 30, 32}, 1)));
  CHECK_THROWS(net.forward(random_tensor({1, 10, 32, 32}, 1)));
  Tensor bad = random_tensor({1, 12, 32, 32}, 1);
  bad.mutable_values()[5] = std::nan("");
  CHECK_THROWS(net.forward(bad));
}

TEST_CASE("network is deterministic in its seed") {
  NetworkConfig cfg = testing::toy_config().network();
  Tensor x = random_tensor({1, 12, 32, 32}, 2);
  nn::NoGradGuard g;
  Tensor a = SegmentationNetwork(cfg, 4).forward(x);
  Tensor b = SegmentationNetwork(cfg, 4).forward(x);
  Tensor c = SegmentationNetwork(cfg, 5).forward(x);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  CHECK_FALSE(std::equal(a.values().begin(), a.values().end(), c.values().begin()));
}
