#include "dimshrink/checkpoint.hpp"

#include <algorithm>

#include "json.hpp"

namespace dimshrink {

using nlohmann::json;

namespace {

constexpr const char* kWeightPrefix = "weights/";
constexpr const char* kAdamMPrefix = "adam_m/";
constexpr const char* kAdamVPrefix = "adam_v/";

void add_all(const nn::NamedTensors& named, std::map<std::string, StoredTensor>& out) {
  for (const auto& [name, t] : named) {
    out[name] = StoredTensor{t.shape(), {t.values().begin(), t.values().end()}};
  }
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::map<std::string, StoredTensor> snapshot_weights(const SegmentationNetwork& net) {
  std::map<std::string, StoredTensor> out;
  add_all(net.parameters(), out);
  add_all(net.buffers(), out);
  return out;
}

void restore_weights(SegmentationNetwork& net, const std::map<std::string, StoredTensor>& weights) {
  nn::NamedTensors targets = net.parameters();
  for (auto& b : net.buffers()) targets.push_back(std::move(b));
  for (const auto& [name, t] : targets) {
    auto it = weights.find(name);
    if (it == weights.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape != t.shape()) {
      throw CheckpointError("checkpoint tensor '" + name + "' has shape " + nn::to_string(it->second.shape) +
                            ", network expects " + nn::to_string(t.shape()));
    }
  }
  for (auto& [name, t] : targets) {
    const auto& src = weights.at(name).values;
    std::copy(src.begin(), src.end(), t.mutable_values().begin());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  TensorArchive ar;
  const TrainingState& s = ckpt.state;
  json manifest = {{"format_version", kCheckpointFormatVersion},
                   {"kind", "checkpoint"},
                   {"config", json::parse(ckpt.config.to_json())},
                   {"state",
                    {{"epoch", s.epoch},
                     {"steps", s.steps},
                     {"lr", s.lr},
                     {"best_loss", s.best_loss},
                     {"has_best", s.has_best},
                     {"bad_epochs", s.bad_epochs},
                     {"reductions", s.reductions}}},
                   {"adam_step", ckpt.adam.step}};
  ar.manifest = manifest.dump(2);
  for (const auto& [name, t] : ckpt.weights) ar.tensors[kWeightPrefix + name] = t;
  for (const auto& [name, m] : ckpt.adam.m) {
    const auto& shape = ckpt.weights.count(name) ? ckpt.weights.at(name).shape
                                                 : nn::Shape{static_cast<int64_t>(m.size())};
    ar.tensors[kAdamMPrefix + name] = StoredTensor{shape, m};
  }
  for (const auto& [name, v] : ckpt.adam.v) {
    const auto& shape = ckpt.weights.count(name) ? ckpt.weights.at(name).shape
                                                 : nn::Shape{static_cast<int64_t>(v.size())};
    ar.tensors[kAdamVPrefix + name] = StoredTensor{shape, v};
  }
  ar.save(path, TensorArchive::DType::kFloat64);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  TensorArchive ar = TensorArchive::load(path);
  json manifest = json::parse(ar.manifest, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object() || manifest.value("kind", "") != "checkpoint") {
    throw CheckpointError(path.string() + " is a tensor archive but not a checkpoint");
  }
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError(path.string() + " has checkpoint format " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointFormatVersion));
  }
  Checkpoint ckpt;
  ckpt.config = TrainConfig::from_json(manifest.at("config").dump());
  const json& s = manifest.at("state");
  ckpt.state.epoch = s.at("epoch").get<int64_t>();
  ckpt.state.steps = s.at("steps").get<int64_t>();
  ckpt.state.lr = s.at("lr").get<double>();
  ckpt.state.best_loss = s.at("best_loss").get<double>();
  ckpt.state.has_best = s.at("has_best").get<bool>();
  ckpt.state.bad_epochs = s.at("bad_epochs").get<int64_t>();
  ckpt.state.reductions = s.at("reductions").get<int64_t>();
  ckpt.adam.step = manifest.at("adam_step").get<int64_t>();
  for (auto& [name, t] : ar.tensors) {
    if (starts_with(name, kWeightPrefix)) {
      ckpt.weights[name.substr(std::char_traits<char>::length(kWeightPrefix))] = std::move(t);
    } else if (starts_with(name, kAdamMPrefix)) {
      ckpt.adam.m[name.substr(std::char_traits<char>::length(kAdamMPrefix))] = std::move(t.values);
    } else if (starts_with(name, kAdamVPrefix)) {
      ckpt.adam.v[name.substr(std::char_traits<char>::length(kAdamVPrefix))] = std::move(t.values);
    }
  }
  return ckpt;
}

std::unique_ptr<SegmentationNetwork> build_network(const Checkpoint& ckpt) {
  auto net = std::make_unique<SegmentationNetwork>(ckpt.config.network(), ckpt.config.seed);
  restore_weights(*net, ckpt.weights);
  return net;
}

}  // namespace dimshrink
