#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimshrink/nn/tensor.hpp"

namespace dimshrink {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  nn::Shape shape;
  std::vector<double> values;
};

/// Named tensors plus a free-form text manifest (JSON by convention).
///
/// On-disk layout, little-endian:
///   "DSTA" | u32 version | u64 manifest bytes | manifest | u64 count |
///   count x ( u32 name bytes | name | u8 dtype (1=f32, 2=f64) | u32 rank |
///             i64 dims[rank] | values )
struct TensorArchive {
  enum class DType : uint8_t { kFloat32 = 1, kFloat64 = 2 };

  std::string manifest;
  std::map<std::string, StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
  void put(const std::string& name, const nn::Tensor& t);

  void save(const std::filesystem::path& path, DType dtype = DType::kFloat64) const;
  static TensorArchive load(const std::filesystem::path& path);
};

/// CRC-32 over the float64 little-endian bytes of `values`.
uint32_t crc32_of(std::span<const double> values, uint32_t seed = 0);

}  // namespace dimshrink
