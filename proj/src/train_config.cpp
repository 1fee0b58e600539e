#include "dimshrink/train_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dimshrink {

using nlohmann::json;

namespace {

json shrink_json(const TrainConfig::Shrink& s) {
  return {{"factors", s.factors}, {"channels", s.channels}, {"groups", s.groups}};
}

json decoder_json(const TrainConfig::Decoder& d) {
  return {{"channels_2d", d.channels_2d},
          {"channels_3d", d.channels_3d},
          {"bridge_channels", d.bridge_channels},
          {"groups", d.groups},
          {"upsample", d.upsample}};
}

json config_json(const TrainConfig& c) {
  return {{"crop", c.crop},
          {"shrink", shrink_json(c.shrink)},
          {"decoder", decoder_json(c.decoder)},
          {"backbone", c.backbone},
          {"backbone_weights", c.backbone_weights},
          {"freeze_backbone", c.freeze_backbone},
          {"imagenet_normalize", c.imagenet_normalize},
          {"lr", c.lr},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"max_reductions", c.max_reductions},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"max_steps", c.max_steps},
          {"modality", std::string(modality_tag(c.modality))},
          {"seed", c.seed},
          {"eps", c.eps}};
}

// Reads j[key] into `out` when present; unknown keys are caught by the caller.
template <typename T>
void read(const json& j, const std::string& key, const std::string& path, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + path + key + "' has the wrong type: " + it->dump());
  }
}

void reject_unknown(const json& j, const json& reference, const std::string& path) {
  if (!j.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!reference.contains(it.key())) throw ConfigError("unknown config key '" + path + it.key() + "'");
  }
}

TrainConfig parse(const json& j) {
  TrainConfig c;
  const json ref = config_json(c);
  reject_unknown(j, ref, "");
  read(j, "crop", "", c.crop);
  if (auto it = j.find("shrink"); it != j.end()) {
    reject_unknown(*it, ref["shrink"], "shrink.");
    read(*it, "factors", "shrink.", c.shrink.factors);
    read(*it, "channels", "shrink.", c.shrink.channels);
    read(*it, "groups", "shrink.", c.shrink.groups);
  }
  if (auto it = j.find("decoder"); it != j.end()) {
    reject_unknown(*it, ref["decoder"], "decoder.");
    read(*it, "channels_2d", "decoder.", c.decoder.channels_2d);
    read(*it, "channels_3d", "decoder.", c.decoder.channels_3d);
    read(*it, "bridge_channels", "decoder.", c.decoder.bridge_channels);
    read(*it, "groups", "decoder.", c.decoder.groups);
    read(*it, "upsample", "decoder.", c.decoder.upsample);
  }
  read(j, "backbone", "", c.backbone);
  read(j, "backbone_weights", "", c.backbone_weights);
  read(j, "freeze_backbone", "", c.freeze_backbone);
  read(j, "imagenet_normalize", "", c.imagenet_normalize);
  read(j, "lr", "", c.lr);
  read(j, "plateau_factor", "", c.plateau_factor);
  read(j, "plateau_patience", "", c.plateau_patience);
  read(j, "max_reductions", "", c.max_reductions);
  read(j, "batch_size", "", c.batch_size);
  read(j, "max_epochs", "", c.max_epochs);
  read(j, "max_steps", "", c.max_steps);
  std::string modality(modality_tag(c.modality));
  read(j, "modality", "", modality);
  try {
    c.modality = parse_modality(modality);
  } catch (const std::exception&) {
    throw ConfigError("config key 'modality' has unknown value '" + modality + "'");
  }
  read(j, "seed", "", c.seed);
  read(j, "eps", "", c.eps);
  return c;
}

}  // namespace

void TrainConfig::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (crop[a] < 1) throw ConfigError("crop extents must be positive, got " + to_string(crop));
  }
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
    throw ConfigError("plateau_factor must lie in (0, 1)");
  }
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be at least 1");
  if (max_reductions < 0) throw ConfigError("max_reductions must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (decoder.upsample != "nearest" && decoder.upsample != "linear") {
    throw ConfigError("decoder.upsample must be 'nearest' or 'linear'");
  }
}

NetworkConfig TrainConfig::network(const BackboneRegistry& registry) const {
  validate();
  NetworkConfig net;
  net.shrink.factors = shrink.factors;
  net.shrink.channels = shrink.channels;
  net.shrink.groups = shrink.groups;
  net.shrink.input_depth = crop[2];
  net.shrink.validate();
  if (!registry.contains(backbone)) throw ConfigError("unknown backbone '" + backbone + "'");
  net.backbone = backbone;
  net.imagenet_normalize = imagenet_normalize;

  const TapSpec& taps = registry.taps(backbone);
  const int64_t deepest = taps.back().stride;
  if (crop[0] % deepest != 0 || crop[1] % deepest != 0) {
    throw ConfigError("crop " + to_string(crop) + " in-plane extents must be divisible by the " +
                      backbone + " stride " + std::to_string(deepest));
  }
  net.decoder = DecoderConfig::mirrored(taps, net.shrink);
  if (!decoder.channels_2d.empty()) net.decoder.channels_2d = decoder.channels_2d;
  if (!decoder.channels_3d.empty()) net.decoder.channels_3d = decoder.channels_3d;
  if (decoder.bridge_channels > 0) net.decoder.bridge_channels = decoder.bridge_channels;
  if (decoder.groups > 0) net.decoder.groups = decoder.groups;
  net.decoder.upsample = decoder.upsample == "linear" ? nn::UpsampleMode::kLinear : nn::UpsampleMode::kNearest;
  net.decoder.validate(taps.size(), net.shrink.factors.size());
  return net;
}

std::string TrainConfig::to_json() const { return config_json(*this).dump(2); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse(j);
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void TrainConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json j = config_json(*this);
  std::string pointer = "/" + key;
  for (auto& ch : pointer) {
    if (ch == '.') ch = '/';
  }
  const json::json_pointer ptr(pointer);
  if (!j.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  j[ptr] = value;
  *this = parse(j);
}

}  // namespace dimshrink
