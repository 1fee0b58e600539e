#include "doctest.h"

#include <algorithm>
#include <fstream>

#include "dimshrink/synthetic.hpp"
#include "dimshrink/trainer.hpp"
#include "support.hpp"

using namespace dimshrink;
using nn::Tensor;

namespace {

std::vector<TrainingCase> phantom_cases(int count, const Dims& dims) {
  std::vector<TrainingCase> out;
  for (int i = 0; i < count; ++i) {
    Phantom p = make_phantom(static_cast<uint64_t>(i), dims);
    out.push_back({"phantom_" + std::to_string(i), zscore_normalize(p.volume), labels_to_nested(p.labels)});
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

TEST_CASE("plateau schedule fires once after 50 stagnant epochs") {
  PlateauScheduler s(0.1, 50, 2);
  double lr = 1e-4;
  std::vector<int> fired;
  for (int epoch = 1; epoch <= 100; ++epoch) {
    if (s.observe(1.0, lr).reduced) fired.push_back(epoch);
  }
  REQUIRE(fired.size() == 1);
  CHECK(fired[0] == 51);
  CHECK(lr == doctest::Approx(1e-5).epsilon(1e-12));
}

TEST_CASE("plateau schedule resets on improvement and stops after its reductions") {
  PlateauScheduler s(0.1, 3, 2);
  double lr = 1.0;
  // Improvement every other epoch never lets the counter reach 3.
  for (int e = 0; e < 20; ++e) CHECK_FALSE(s.observe(e % 2 ? 5.0 : 5.0 - e, lr).reduced);
  CHECK(lr == 1.0);

  PlateauScheduler t(0.1, 2, 2);
  lr = 1.0;
  std::vector<std::string> events;
  for (int e = 1; e <= 10; ++e) {
    auto d = t.observe(1.0, lr);
    if (d.reduced) events.push_back("r" + std::to_string(e));
    if (d.stop) {
      events.push_back("s" + std::to_string(e));
      break;
    }
  }
  CHECK(events == std::vector<std::string>{"r3", "r5", "s7"});
  CHECK(lr == doctest::Approx(0.01));
}

TEST_CASE("adam matches a hand-computed update") {
  Tensor w = Tensor::parameter({2}, {1.0, -2.0});
  Adam adam({{"w", w}});
  // loss = 3 w0 + w1^2 -> grad (3, 2 w1)
  auto run = [&] { nn::add(nn::scale(nn::sum(nn::mul(w, Tensor({2}, std::vector<double>{1, 0}))), 3.0),
                           nn::sum(nn::mul(nn::mul(w, w), Tensor({2}, std::vector<double>{0, 1})))).backward(); };
  run();
  adam.step(0.1);
  // First step moves each weight by lr * sign(grad) up to eps.
  CHECK(w.values()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-7));
  CHECK(w.values()[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-7));
  const double w1 = w.values()[1];
  run();
  adam.step(0.1);
  const double g1 = 2 * w1;
  const double m = 0.9 * 0.1 * -4.0 + 0.1 * g1, v = 0.999 * 0.001 * 16.0 + 0.001 * g1 * g1;
  const double expected = w1 - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(w.values()[1] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(adam.state().step == 2);
}

TEST_CASE("train config defaults, JSON round trip and overrides") {
  TrainConfig d;
  CHECK(d.lr == 1e-4);
  CHECK(d.plateau_factor == 0.1);
  CHECK(d.plateau_patience == 50);
  CHECK(d.batch_size == 1);
  CHECK(d.crop == Dims{192, 160, 108});

  TrainConfig c = testing::toy_config();
  c.seed = 17;
  c.modality = Modality::kFlair;
  TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  c.apply_override("lr=0.5");
  c.apply_override("shrink.channels=[4,4]");
  c.apply_override("modality=t2");
  c.apply_override("crop.2=12");
  CHECK(c.lr == 0.5);
  CHECK(c.shrink.channels == std::vector<int64_t>{4, 4});
  CHECK(c.modality == Modality::kT2);
  try {
    c.apply_override("decoder.widht=3");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("decoder.widht") != std::string::npos);
  }
  try {
    TrainConfig::from_json(R"({"lr": 0.1, "learning_rate": 2})");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"lr": "fast"})"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"modality": "dwi"})"), ConfigError);
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.plateau_factor = 10;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = testing::toy_config();
  bad.crop = {30, 32, 12};
  CHECK_THROWS_AS(bad.network(), ConfigError);
}

TEST_CASE("checkpoint round trip reproduces the forward pass exactly") {
  auto dir = testing::scratch_dir("ckpt");
  TrainConfig cfg = testing::toy_config();
  cfg.max_epochs = 2;
  auto cases = phantom_cases(1, cfg.crop);
  TrainResult r = train(cfg, cases);
  save_checkpoint(r.last, dir / "m.dsta");
  Checkpoint loaded = load_checkpoint(dir / "m.dsta");
  CHECK(loaded.state.epoch == 2);
  CHECK(loaded.config.to_json() == cfg.to_json());
  CHECK(loaded.adam.step == r.last.adam.step);
  auto a = build_network(r.last), b = build_network(loaded);
  auto pa = a->segment(cases[0].volume), pb = b->segment(cases[0].volume);
  CHECK(pa.values == pb.values);

  TensorArchive not_ckpt;
  not_ckpt.manifest = "{}";
  not_ckpt.save(dir / "x.dsta");
  CHECK_THROWS_AS(load_checkpoint(dir / "x.dsta"), CheckpointError);

  Checkpoint other = loaded;
  other.weights.erase(other.weights.begin());
  CHECK_THROWS_AS(build_network(other), CheckpointError);
}

TEST_CASE("training is deterministic, logs every epoch and keeps lr monotone") {
  auto dir = testing::scratch_dir("det");
  TrainConfig cfg = testing::toy_config();
  cfg.max_epochs = 3;
  auto cases = phantom_cases(2, cfg.crop);
  TrainOptions opt;
  opt.log_csv = dir / "log.csv";
  TrainResult a = train(cfg, cases, opt);
  TrainResult b = train(cfg, cases);
  REQUIRE(a.log.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.log[i].loss_total == b.log[i].loss_total);
    CHECK(a.log[i].epoch == static_cast<int64_t>(i + 1));
  }
  std::ifstream in(dir / "log.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,lr,loss_total,loss_ce,dice_wt,dice_tc,dice_et");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);
  CHECK(a.last.state.steps == 6);
}

TEST_CASE("loss decreases over the first twenty epochs on phantoms") {
  TrainConfig cfg = testing::toy_config();
  cfg.max_epochs = 21;
  auto cases = phantom_cases(2, cfg.crop);
  TrainResult r = train(cfg, cases);
  std::vector<double> early, late;
  for (const auto& e : r.log) (e.epoch <= 11 ? early : late).push_back(e.loss_total);
  CHECK(median(late) < median(early));
  for (std::size_t i = 1; i < r.log.size(); ++i) CHECK(r.log[i].lr <= r.log[i - 1].lr);
  CHECK(r.log.front().lr == cfg.lr);
}

TEST_CASE("resume continues the epoch counter and optimizer") {
  auto dir = testing::scratch_dir("resume");
  TrainConfig cfg = testing::toy_config();
  auto cases = phantom_cases(1, cfg.crop);
  cfg.max_epochs = 4;
  TrainResult straight = train(cfg, cases);

  cfg.max_epochs = 2;
  TrainOptions first;
  first.log_csv = dir / "log.csv";
  TrainResult part = train(cfg, cases, first);
  save_checkpoint(part.last, dir / "part.dsta");
  cfg.max_epochs = 4;
  TrainOptions second;
  second.resume = load_checkpoint(dir / "part.dsta");
  second.log_csv = dir / "log.csv";
  TrainResult rest = train(cfg, cases, second);
  REQUIRE(rest.log.size() == 2);
  CHECK(rest.log[0].epoch == 3);
  CHECK(rest.log[1].loss_total == doctest::Approx(straight.log[3].loss_total).epsilon(1e-12));
  std::ifstream in(dir / "log.csv");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 5);
}

TEST_CASE("frozen backbone weights do not move") {
  TrainConfig cfg = testing::toy_config();
  cfg.freeze_backbone = true;
  cfg.max_epochs = 2;
  auto cases = phantom_cases(1, cfg.crop);
  SegmentationNetwork fresh(cfg.network(), cfg.seed);
  TrainResult r = train(cfg, cases);
  for (auto& [name, t] : fresh.backbone_parameters()) {
    const auto& after = r.last.weights.at(name).values;
    CHECK(std::equal(after.begin(), after.end(), t.values().begin()));
  }
  CHECK(r.last.adam.m.count("backbone.layer1.conv.weight") == 0);
}

TEST_CASE("batch size accumulates gradients into fewer steps") {
  TrainConfig cfg = testing::toy_config();
  cfg.batch_size = 2;
  cfg.max_epochs = 1;
  auto cases = phantom_cases(3, cfg.crop);
  TrainResult r = train(cfg, cases);
  CHECK(r.last.state.steps == 2);
}

TEST_CASE("training errors") {
  TrainConfig cfg = testing::toy_config();
  CHECK_THROWS(train(cfg, std::vector<TrainingCase>{}));
  auto cases = phantom_cases(1, cfg.crop);
  auto wrong = phantom_cases(1, {32, 32, 16});
  CHECK_THROWS(train(cfg, wrong));
  cases[0].id = "broken_case";
  cases[0].volume.data[10] = std::numeric_limits<double>::infinity();
  try {
    train(cfg, cases);
    FAIL("expected an error");
  } catch (const NonFiniteLossError& e) {
    CHECK(std::string(e.what()).find("broken_case") != std::string::npos);
  }
}
