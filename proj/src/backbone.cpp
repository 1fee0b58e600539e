#include "dimshrink/backbone.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

#include "dimshrink/efficientnet.hpp"
#include "dimshrink/toy_backbone.hpp"

namespace dimshrink {

void validate_taps(const TapSpec& taps) {
  if (taps.empty()) throw BackboneError("tap spec is empty");
  int64_t prev = 0;
  for (const auto& t : taps) {
    if (t.stride < 1 || (t.stride & (t.stride - 1)) != 0) {
      throw BackboneError("tap " + t.name + ": stride " + std::to_string(t.stride) +
                          " is not a power of two");
    }
    if (t.stride <= prev) throw BackboneError("tap strides must strictly increase");
    if (t.channels < 1) throw BackboneError("tap " + t.name + ": channels must be positive");
    prev = t.stride;
  }
}

BackboneTaps Backbone::forward(const nn::Tensor& image) const {
  if (image.rank() != 4 || image.dim(0) != 3 || image.dim(1) != 1) {
    throw BackboneError("backbone expects a 3-channel 2D image (3, 1, H, W), got " +
                        nn::to_string(image.shape()));
  }
  const auto& spec = taps();
  const int64_t deepest = spec.back().stride;
  const int64_t h = image.dim(2), w = image.dim(3);
  if (h % deepest != 0 || w % deepest != 0) {
    throw BackboneError("image " + std::to_string(w) + "x" + std::to_string(h) +
                        " not divisible by deepest tap stride " + std::to_string(deepest));
  }
  BackboneTaps out{extract(image)};
  if (out.maps.size() != spec.size()) throw std::logic_error("backbone returned wrong tap count");
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const nn::Shape want{spec[i].channels, 1, h / spec[i].stride, w / spec[i].stride};
    if (out.maps[i].shape() != want) {
      throw std::logic_error("tap " + spec[i].name + " has shape " +
                             nn::to_string(out.maps[i].shape()) + ", declared " + nn::to_string(want));
    }
  }
  return out;
}

namespace {

// Accepts (Cout, Cin, kh, kw) for our (Cout, Cin, 1, kh, kw) conv weights.
bool compatible(const nn::Shape& stored, const nn::Shape& want) {
  if (stored == want) return true;
  if (want.size() == 5 && want[2] == 1 && stored.size() == 4) {
    return stored[0] == want[0] && stored[1] == want[1] && stored[2] == want[3] &&
           stored[3] == want[4];
  }
  return false;
}

}  // namespace

uint32_t load_pretrained(Backbone& backbone, const TensorArchive& weights) {
  auto targets = backbone.parameters();
  for (auto& b : backbone.buffers()) targets.push_back(b);

  std::vector<const StoredTensor*> sources;
  for (const auto& [name, t] : targets) {
    const StoredTensor* s = weights.find(name);
    if (!s) throw BackboneError("weight file is missing tensor " + name);
    if (!compatible(s->shape, t.shape())) {
      throw BackboneError("shape mismatch for tensor " + name + ": file has " +
                          nn::to_string(s->shape) + ", backbone expects " + nn::to_string(t.shape()));
    }
    sources.push_back(s);
  }
  std::size_t ignored = 0;
  for (const auto& [name, t] : weights.tensors) {
    const bool known = std::any_of(targets.begin(), targets.end(),
                                   [&](const auto& p) { return p.first == name; });
    if (!known) ++ignored;
  }

  uint32_t crc = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto dst = targets[i].second.mutable_values();
    std::copy(sources[i]->values.begin(), sources[i]->values.end(), dst.begin());
    crc = crc32_of(dst, crc);
  }
  spdlog::info("loaded {} backbone tensors ({} ignored), checksum {:08x}", targets.size(), ignored,
               crc);
  return crc;
}

uint32_t load_pretrained(Backbone& backbone, const std::filesystem::path& weights) {
  return load_pretrained(backbone, TensorArchive::load(weights));
}

TensorArchive export_weights(const Backbone& backbone) {
  TensorArchive ar;
  ar.manifest = R"({"kind":"backbone-weights"})";
  for (const auto& [name, t] : backbone.parameters()) ar.put(name, t);
  for (const auto& [name, t] : backbone.buffers()) ar.put(name, t);
  return ar;
}

void BackboneRegistry::add(const std::string& name, Factory factory, TapSpec taps) {
  if (contains(name)) throw BackboneError("backbone '" + name + "' is already registered");
  validate_taps(taps);
  entries_.emplace_back(name, Entry{std::move(factory), std::move(taps)});
}

bool BackboneRegistry::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const TapSpec& BackboneRegistry::taps(const std::string& name) const {
  for (const auto& [n, e] : entries_) {
    if (n == name) return e.taps;
  }
  throw BackboneError("unknown backbone '" + name + "'");
}

std::unique_ptr<Backbone> BackboneRegistry::create(const std::string& name, uint64_t seed) const {
  for (const auto& [n, e] : entries_) {
    if (n != name) continue;
    auto bb = e.factory(seed);
    const auto& got = bb->taps();
    bool same = got.size() == e.taps.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) {
      same = got[i].stride == e.taps[i].stride && got[i].channels == e.taps[i].channels;
    }
    if (!same) throw BackboneError("backbone '" + name + "' does not match its registered taps");
    return bb;
  }
  throw BackboneError("unknown backbone '" + name + "'");
}

std::vector<std::string> BackboneRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

BackboneRegistry& BackboneRegistry::global() {
  static BackboneRegistry registry = [] {
    BackboneRegistry r;
    r.add("efficientnet-b0",
          [](uint64_t seed) { return std::make_unique<EfficientNetB0>(seed); },
          EfficientNetB0::tap_spec());
    r.add("toy-cnn", [](uint64_t seed) { return std::make_unique<ToyCnn>(seed); },
          ToyCnn::tap_spec());
    return r;
  }();
  return registry;
}

void register_backbone(const std::string& name, BackboneRegistry::Factory factory, TapSpec taps) {
  BackboneRegistry::global().add(name, std::move(factory), std::move(taps));
}

}  // namespace dimshrink
