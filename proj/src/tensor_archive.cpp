#include "dimshrink/tensor_archive.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace dimshrink {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'T', 'A'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw ArchiveError("tensor archive truncated while reading " + what);
  }
  return v;
}

}  // namespace

const StoredTensor* TensorArchive::find(const std::string& name) const {
  auto it = tensors.find(name);
  return it == tensors.end() ? nullptr : &it->second;
}

void TensorArchive::put(const std::string& name, const nn::Tensor& t) {
  tensors[name] = StoredTensor{t.shape(), {t.values().begin(), t.values().end()}};
}

void TensorArchive::save(const std::filesystem::path& path, DType dtype) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ArchiveError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kVersion);
  write_pod<uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  write_pod<uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(os, static_cast<uint8_t>(dtype));
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
    for (auto d : t.shape) write_pod<int64_t>(os, d);
    if (dtype == DType::kFloat64) {
      os.write(reinterpret_cast<const char*>(t.values.data()),
               static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    } else {
      for (double v : t.values) write_pod<float>(os, static_cast<float>(v));
    }
  }
  if (!os) throw ArchiveError("write failed: " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArchiveError("cannot open tensor archive " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ArchiveError(path.string() + " is not a tensor archive");
  }
  const auto version = read_pod<uint32_t>(is, "version");
  if (version != kVersion) {
    throw ArchiveError(path.string() + ": unsupported archive version " + std::to_string(version));
  }
  TensorArchive ar;
  const auto manifest_len = read_pod<uint64_t>(is, "manifest length");
  ar.manifest.resize(manifest_len);
  if (!is.read(ar.manifest.data(), static_cast<std::streamsize>(manifest_len))) {
    throw ArchiveError("tensor archive truncated in manifest");
  }
  const auto count = read_pod<uint64_t>(is, "tensor count");
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw ArchiveError("tensor archive truncated in name");
    const auto dtype = read_pod<uint8_t>(is, name);
    const auto rank = read_pod<uint32_t>(is, name);
    StoredTensor t;
    for (uint32_t r = 0; r < rank; ++r) t.shape.push_back(read_pod<int64_t>(is, name));
    const auto n = static_cast<std::size_t>(nn::numel(t.shape));
    t.values.resize(n);
    if (dtype == static_cast<uint8_t>(DType::kFloat64)) {
      if (!is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * 8))) {
        throw ArchiveError("tensor archive truncated in " + name);
      }
    } else if (dtype == static_cast<uint8_t>(DType::kFloat32)) {
      for (auto& v : t.values) v = read_pod<float>(is, name);
    } else {
      throw ArchiveError("tensor " + name + " has unknown dtype " + std::to_string(dtype));
    }
    ar.tensors.emplace(std::move(name), std::move(t));
  }
  return ar;
}

uint32_t crc32_of(std::span<const double> values, uint32_t seed) {
  uLong crc = seed;
  const auto* bytes = reinterpret_cast<const Bytef*>(values.data());
  std::size_t remaining = values.size_bytes();
  while (remaining > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(remaining, 1u << 30));
    crc = crc32(crc, bytes, chunk);
    bytes += chunk;
    remaining -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace dimshrink
