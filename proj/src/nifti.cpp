#include "dimshrink/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

namespace dimshrink {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum DataType : int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
  kInt64 = 1024,
  kUInt64 = 1280,
};

int bytes_per_voxel(int16_t datatype) {
  switch (datatype) {
    case kUInt8:
    case kInt8: return 1;
    case kInt16:
    case kUInt16: return 2;
    case kInt32:
    case kUInt32:
    case kFloat32: return 4;
    case kFloat64:
    case kInt64:
    case kUInt64: return 8;
    default: return 0;
  }
}

struct GzFile {
  gzFile handle = nullptr;
  explicit GzFile(const std::filesystem::path& path, const char* mode)
      : handle(gzopen(path.c_str(), mode)) {}
  ~GzFile() {
    if (handle) gzclose(handle);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;

  // Reads up to n bytes; returns the count actually read.
  std::size_t read(void* dst, std::size_t n) {
    std::size_t total = 0;
    auto* p = static_cast<char*>(dst);
    while (total < n) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - total, 1u << 30));
      const int got = gzread(handle, p + total, chunk);
      if (got <= 0) break;
      total += static_cast<std::size_t>(got);
    }
    return total;
  }
};

// Little helper over the raw header bytes that honours the file's byte order.
class HeaderView {
 public:
  HeaderView(const unsigned char* bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    unsigned char tmp[sizeof(T)];
    std::memcpy(tmp, bytes_ + offset, sizeof(T));
    if (swap_) std::reverse(tmp, tmp + sizeof(T));
    T v;
    std::memcpy(&v, tmp, sizeof(T));
    return v;
  }

 private:
  const unsigned char* bytes_;
  bool swap_;
};

template <typename T>
void put(unsigned char* bytes, std::size_t offset, T v) {
  std::memcpy(bytes + offset, &v, sizeof(T));
}

struct RawImage {
  Dims dims{};
  int16_t datatype = 0;
  bool swap = false;
  double slope = 0.0, inter = 0.0;
  Geometry geometry;
  std::vector<unsigned char> payload;
};

RawImage read_raw(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw FileMissingError("no such file: " + path.string());
  }
  GzFile file(path, "rb");
  if (!file.handle) throw FileMissingError("cannot open " + path.string());

  unsigned char hdr[kHeaderSize];
  if (file.read(hdr, kHeaderSize) != kHeaderSize) {
    throw HeaderError(path.string() + ": truncated NIfTI header");
  }
  int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, hdr, 4);
  bool swap = false;
  if (sizeof_hdr != kHeaderSize) {
    if (__builtin_bswap32(static_cast<uint32_t>(sizeof_hdr)) != kHeaderSize) {
      throw HeaderError(path.string() + ": not a NIfTI-1 header (sizeof_hdr=" +
                        std::to_string(sizeof_hdr) + ")");
    }
    swap = true;
  }
  if (std::memcmp(hdr + 344, "n+1", 4) != 0) {
    throw HeaderError(path.string() + ": only single-file NIfTI-1 (magic n+1) is supported");
  }
  const HeaderView h(hdr, swap);

  RawImage raw;
  raw.swap = swap;
  const auto ndim = h.get<int16_t>(40);
  if (ndim < 1 || ndim > 7) throw HeaderError(path.string() + ": invalid dim[0]");
  if (ndim < 3) throw DimensionalityError(path.string() + ": image has only " + std::to_string(ndim) + " dimensions");
  for (int i = 4; i <= ndim; ++i) {
    if (h.get<int16_t>(40 + 2 * i) > 1) {
      throw DimensionalityError(path.string() + ": expected a 3D scalar image, dim[" +
                                std::to_string(i) + "]=" +
                                std::to_string(h.get<int16_t>(40 + 2 * i)));
    }
  }
  for (int a = 0; a < 3; ++a) {
    raw.dims[a] = h.get<int16_t>(42 + 2 * a);
    if (raw.dims[a] < 1) throw HeaderError(path.string() + ": non-positive dimension");
  }
  raw.datatype = h.get<int16_t>(70);
  const int bpv = bytes_per_voxel(raw.datatype);
  if (bpv == 0) {
    throw HeaderError(path.string() + ": unsupported datatype " + std::to_string(raw.datatype));
  }
  const float vox_offset = h.get<float>(108);
  raw.slope = h.get<float>(112);
  raw.inter = h.get<float>(116);

  Geometry& g = raw.geometry;
  g.qfac = h.get<float>(76) < 0 ? -1.0 : 1.0;
  for (int a = 0; a < 3; ++a) g.spacing[a] = h.get<float>(80 + 4 * a);
  g.xyzt_units = hdr[123];
  g.qform_code = h.get<int16_t>(252);
  g.sform_code = h.get<int16_t>(254);
  for (int a = 0; a < 3; ++a) {
    g.quatern[a] = h.get<float>(256 + 4 * a);
    g.qoffset[a] = h.get<float>(268 + 4 * a);
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) g.srow[r][c] = h.get<float>(280 + 16 * r + 4 * c);
  }

  const auto skip = static_cast<std::size_t>(std::max<float>(vox_offset, kHeaderSize)) - kHeaderSize;
  std::vector<unsigned char> ext(skip);
  if (file.read(ext.data(), skip) != skip) {
    throw PayloadError(path.string() + ": file ends before vox_offset");
  }
  const auto bytes = static_cast<std::size_t>(voxel_count(raw.dims)) * static_cast<std::size_t>(bpv);
  raw.payload.resize(bytes);
  if (file.read(raw.payload.data(), bytes) != bytes) {
    throw PayloadError(path.string() + ": voxel data truncated (expected " + std::to_string(bytes) +
                       " bytes)");
  }
  return raw;
}

std::vector<double> decode(const RawImage& raw) {
  const int bpv = bytes_per_voxel(raw.datatype);
  const auto n = static_cast<std::size_t>(voxel_count(raw.dims));
  std::vector<double> out(n);
  const HeaderView v(raw.payload.data(), raw.swap);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * static_cast<std::size_t>(bpv);
    switch (raw.datatype) {
      case kUInt8: out[i] = raw.payload[off]; break;
      case kInt8: out[i] = static_cast<int8_t>(raw.payload[off]); break;
      case kInt16: out[i] = v.get<int16_t>(off); break;
      case kUInt16: out[i] = v.get<uint16_t>(off); break;
      case kInt32: out[i] = v.get<int32_t>(off); break;
      case kUInt32: out[i] = v.get<uint32_t>(off); break;
      case kFloat32: out[i] = v.get<float>(off); break;
      case kFloat64: out[i] = v.get<double>(off); break;
      case kInt64: out[i] = static_cast<double>(v.get<int64_t>(off)); break;
      case kUInt64: out[i] = static_cast<double>(v.get<uint64_t>(off)); break;
      default: break;
    }
  }
  if (raw.slope != 0.0 && !(raw.slope == 1.0 && raw.inter == 0.0)) {
    for (auto& x : out) x = x * raw.slope + raw.inter;
  }
  return out;
}

void write_image(const std::filesystem::path& path, const Dims& dims, const Geometry& g,
                 int16_t datatype, const void* data, std::size_t bytes) {
  unsigned char hdr[kVoxOffset] = {};
  put<int32_t>(hdr, 0, kHeaderSize);
  put<int16_t>(hdr, 40, 3);
  for (int a = 0; a < 3; ++a) put<int16_t>(hdr, 42 + 2 * a, static_cast<int16_t>(dims[a]));
  for (int a = 3; a < 7; ++a) put<int16_t>(hdr, 42 + 2 * a, 1);
  put<int16_t>(hdr, 70, datatype);
  put<int16_t>(hdr, 72, static_cast<int16_t>(8 * bytes_per_voxel(datatype)));
  put<float>(hdr, 76, static_cast<float>(g.qfac));
  for (int a = 0; a < 3; ++a) put<float>(hdr, 80 + 4 * a, static_cast<float>(g.spacing[a]));
  put<float>(hdr, 108, static_cast<float>(kVoxOffset));
  put<float>(hdr, 112, 1.0f);
  put<float>(hdr, 116, 0.0f);
  hdr[123] = g.xyzt_units;
  put<int16_t>(hdr, 252, g.qform_code);
  put<int16_t>(hdr, 254, g.sform_code);
  for (int a = 0; a < 3; ++a) {
    put<float>(hdr, 256 + 4 * a, static_cast<float>(g.quatern[a]));
    put<float>(hdr, 268 + 4 * a, static_cast<float>(g.qoffset[a]));
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) put<float>(hdr, 280 + 16 * r + 4 * c, static_cast<float>(g.srow[r][c]));
  }
  std::memcpy(hdr + 344, "n+1", 4);

  const bool gz = path.extension() == ".gz";
  GzFile file(path, gz ? "wb6" : "wbT");
  if (!file.handle) throw VolumeError("cannot open " + path.string() + " for writing");
  auto write = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    while (n > 0) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      if (gzwrite(file.handle, c, chunk) != static_cast<int>(chunk)) {
        throw VolumeError("write failed: " + path.string());
      }
      c += chunk;
      n -= chunk;
    }
  };
  write(hdr, kVoxOffset);
  write(data, bytes);
}

}  // namespace

Volume load_volume(const std::filesystem::path& path) {
  RawImage raw = read_raw(path);
  Volume vol;
  vol.dims = raw.dims;
  vol.origin_dims = raw.dims;
  vol.geometry = raw.geometry;
  vol.data = decode(raw);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    if (!std::isfinite(vol.data[i])) {
      throw PayloadError(path.string() + ": non-finite voxel at index " + std::to_string(i));
    }
  }
  return vol;
}

LabelMap load_labels(const std::filesystem::path& path) {
  RawImage raw = read_raw(path);
  const auto values = decode(raw);
  LabelMap labels;
  labels.dims = raw.dims;
  labels.origin_dims = raw.dims;
  labels.geometry = raw.geometry;
  labels.data.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double r = std::round(values[i]);
    if (!std::isfinite(values[i]) || r != values[i] || !is_valid_label(static_cast<int>(r))) {
      throw LabelError(path.string() + ": unexpected label value " + std::to_string(values[i]));
    }
    labels.data[i] = static_cast<uint8_t>(r);
  }
  return labels;
}

void save_volume(const std::filesystem::path& path, const Volume& vol) {
  std::vector<float> buf(vol.data.begin(), vol.data.end());
  write_image(path, vol.dims, vol.geometry, kFloat32, buf.data(), buf.size() * sizeof(float));
}

void save_labels(const std::filesystem::path& path, const LabelMap& labels) {
  validate(labels);
  write_image(path, labels.dims, labels.geometry, kUInt8, labels.data.data(), labels.data.size());
}

}  // namespace dimshrink
