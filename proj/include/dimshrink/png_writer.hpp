#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dimshrink/volume.hpp"

namespace dimshrink {

/// 8-bit image, row-major, 1 (gray) or 3 (RGB) interleaved channels.
struct Image {
  int64_t width = 0;
  int64_t height = 0;
  int channels = 1;
  std::vector<uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const Image& image);

enum class Plane { kAxial, kCoronal, kSagittal };

/// Slice index through the volume center for `plane`.
int64_t center_slice(const Dims& dims, Plane plane);

/// Grayscale slice min-max scaled over the whole volume. Out-of-range
/// indices fall back to the center slice. Rows run so that the image is
/// upright for the usual radiological display.
Image slice_image(const Volume& vol, Plane plane, std::optional<int64_t> index = std::nullopt);

/// Slice with labels blended in: necrosis red, edema green, enhancing
/// tumor blue.
Image overlay_image(const Volume& vol, const LabelMap& labels, Plane plane,
                    std::optional<int64_t> index = std::nullopt);

/// A single (H, W) plane min-max scaled to gray; `values` is row-major and
/// rows are flipped the same way as slice_image.
Image scaled_gray(std::span<const double> values, int64_t height, int64_t width);

}  // namespace dimshrink
