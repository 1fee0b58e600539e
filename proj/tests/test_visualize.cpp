#include "doctest.h"

#include <fstream>

#include "dimshrink/png_writer.hpp"
#include "support.hpp"

using namespace dimshrink;

TEST_CASE("slices and overlays") {
  Volume v;
  v.dims = v.origin_dims = {4, 3, 2};
  v.data.resize(24);
  for (std::size_t i = 0; i < 24; ++i) v.data[i] = static_cast<double>(i);
  LabelMap l;
  l.dims = l.origin_dims = v.dims;
  l.data.assign(24, 0);

  CHECK(center_slice(v.dims, Plane::kAxial) == 1);
  Image axial = slice_image(v, Plane::kAxial);
  CHECK(axial.width == 4);
  CHECK(axial.height == 3);
  CHECK(axial.channels == 1);
  Image sag = slice_image(v, Plane::kSagittal);
  CHECK(sag.width == 3);
  CHECK(sag.height == 2);
  CHECK(slice_image(v, Plane::kAxial, 99).pixels == axial.pixels);

  Image plain = overlay_image(v, l, Plane::kAxial);
  for (std::size_t p = 0; p < axial.pixels.size(); ++p) {
    CHECK(plain.pixels[3 * p] == axial.pixels[p]);
    CHECK(plain.pixels[3 * p + 2] == axial.pixels[p]);
  }
  // Every slice of one label shows that label's tint dominating.
  for (auto [label, channel] : {std::pair{1, 0}, std::pair{2, 1}, std::pair{4, 2}}) {
    l.data.assign(24, static_cast<uint8_t>(label));
    Image o = overlay_image(v, l, Plane::kCoronal);
    for (std::size_t p = 0; p < o.pixels.size() / 3; ++p) {
      for (int k = 0; k < 3; ++k) {
        if (k != channel) CHECK(o.pixels[3 * p + channel] > o.pixels[3 * p + k]);
      }
    }
  }
  l.dims = {4, 3, 1};
  CHECK_THROWS_AS(overlay_image(v, l, Plane::kAxial), GeometryError);
}

TEST_CASE("png files carry the signature and dimensions") {
  auto dir = testing::scratch_dir("png");
  Image img = scaled_gray(std::vector<double>{0, 1, 2, 3, 4, 5}, 2, 3);
  // Rows are flipped to match slice_image.
  CHECK(img.pixels == std::vector<uint8_t>{153, 204, 255, 0, 51, 102});
  write_png(dir / "a.png", img);
  std::ifstream in(dir / "a.png", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() > 24);
  const unsigned char sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  CHECK(std::equal(sig, sig + 8, bytes.begin()));
  CHECK(bytes[19] == 3);  // IHDR width, big-endian
  CHECK(bytes[23] == 2);  // IHDR height
  CHECK_THROWS(scaled_gray(std::vector<double>{1, 2}, 2, 3));
  CHECK_THROWS(write_png(dir / "missing" / "b.png", img));
}
