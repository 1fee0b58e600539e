#include "dimshrink/png_writer.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include <png.h>

namespace dimshrink {

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.width < 1 || image.height < 1 || (image.channels != 1 && image.channels != 3) ||
      image.pixels.size() != static_cast<std::size_t>(image.width * image.height * image.channels)) {
    throw std::invalid_argument("write_png: inconsistent image buffer");
  }
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const auto stride = static_cast<std::size_t>(image.width * image.channels);
  for (int64_t r = 0; r < image.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(r) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

struct SliceGeometry {
  int64_t width, height;
};

SliceGeometry geometry(const Dims& d, Plane plane) {
  switch (plane) {
    case Plane::kAxial: return {d[0], d[1]};
    case Plane::kCoronal: return {d[0], d[2]};
    case Plane::kSagittal: return {d[1], d[2]};
  }
  return {d[0], d[1]};
}

// Volume index of image pixel (col, row); rows are flipped so superior and
// anterior end up at the top.
std::size_t voxel_at(const Dims& d, Plane plane, int64_t slice, int64_t col, int64_t row) {
  int64_t x = 0, y = 0, z = 0;
  switch (plane) {
    case Plane::kAxial: x = col, y = d[1] - 1 - row, z = slice; break;
    case Plane::kCoronal: x = col, y = slice, z = d[2] - 1 - row; break;
    case Plane::kSagittal: x = slice, y = col, z = d[2] - 1 - row; break;
  }
  return static_cast<std::size_t>((z * d[1] + y) * d[0] + x);
}

int64_t resolve_slice(const Dims& d, Plane plane, std::optional<int64_t> index) {
  const int64_t extent = plane == Plane::kAxial ? d[2] : plane == Plane::kCoronal ? d[1] : d[0];
  if (index && *index >= 0 && *index < extent) return *index;
  return center_slice(d, plane);
}

uint8_t to_byte(double v, double lo, double hi) {
  if (hi <= lo) return 0;
  return static_cast<uint8_t>(std::clamp((v - lo) / (hi - lo), 0.0, 1.0) * 255.0 + 0.5);
}

}  // namespace

int64_t center_slice(const Dims& d, Plane plane) {
  switch (plane) {
    case Plane::kAxial: return d[2] / 2;
    case Plane::kCoronal: return d[1] / 2;
    case Plane::kSagittal: return d[0] / 2;
  }
  return 0;
}

Image slice_image(const Volume& vol, Plane plane, std::optional<int64_t> index) {
  const auto [w, h] = geometry(vol.dims, plane);
  const int64_t slice = resolve_slice(vol.dims, plane, index);
  const auto [lo, hi] = std::minmax_element(vol.data.begin(), vol.data.end());
  Image img{w, h, 1, std::vector<uint8_t>(static_cast<std::size_t>(w * h))};
  for (int64_t r = 0; r < h; ++r) {
    for (int64_t c = 0; c < w; ++c) {
      img.pixels[static_cast<std::size_t>(r * w + c)] =
          to_byte(vol.data[voxel_at(vol.dims, plane, slice, c, r)], *lo, *hi);
    }
  }
  return img;
}

Image overlay_image(const Volume& vol, const LabelMap& labels, Plane plane, std::optional<int64_t> index) {
  if (labels.dims != vol.dims) {
    throw GeometryError("overlay: labels " + to_string(labels.dims) + " vs volume " + to_string(vol.dims));
  }
  const Image gray = slice_image(vol, plane, index);
  const int64_t slice = resolve_slice(vol.dims, plane, index);
  constexpr double kAlpha = 0.6;
  Image img{gray.width, gray.height, 3, std::vector<uint8_t>(gray.pixels.size() * 3)};
  for (int64_t r = 0; r < img.height; ++r) {
    for (int64_t c = 0; c < img.width; ++c) {
      const auto p = static_cast<std::size_t>(r * img.width + c);
      const double g = gray.pixels[p];
      std::array<double, 3> rgb{g, g, g};
      std::optional<std::array<double, 3>> tint;
      switch (labels.data[voxel_at(vol.dims, plane, slice, c, r)]) {
        case 4: tint = std::array<double, 3>{0, 0, 255}; break;
        case 1: tint = std::array<double, 3>{255, 0, 0}; break;
        case 2: tint = std::array<double, 3>{0, 255, 0}; break;
        default: break;
      }
      for (int k = 0; k < 3; ++k) {
        const double v = tint ? (1.0 - kAlpha) * rgb[k] + kAlpha * (*tint)[k] : rgb[k];
        img.pixels[3 * p + k] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
      }
    }
  }
  return img;
}

Image scaled_gray(std::span<const double> values, int64_t height, int64_t width) {
  if (values.size() != static_cast<std::size_t>(height * width) || values.empty()) {
    throw std::invalid_argument("scaled_gray: buffer does not match " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  Image img{width, height, 1, std::vector<uint8_t>(values.size())};
  // Row 0 of the plane is the posterior edge; flip so it matches slice_image.
  for (int64_t r = 0; r < height; ++r) {
    for (int64_t c = 0; c < width; ++c) {
      img.pixels[static_cast<std::size_t>(r * width + c)] =
          to_byte(values[static_cast<std::size_t>((height - 1 - r) * width + c)], *lo, *hi);
    }
  }
  return img;
}

}  // namespace dimshrink
