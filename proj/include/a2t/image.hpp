#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace a2t {

/// 8-bit RGB image, row-major, interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  static constexpr int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * channels, 0) {}

  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * channels]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * channels];
  }
  bool operator==(const Image&) const = default;
};

/// An image whose pixels outside the kept mask region are zero.
using MaskedImage = Image;

/// Per-patch saliency on the patch grid, row-major.
struct SaliencyMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  bool normalized = false;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

/// Pixel-resolution keep mask with entries in {0, 1}.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t popcount() const;
  double coverage() const;
};

/// Index of the patch block covering pixel coordinate `coord` when `extent`
/// pixels are split into `blocks` blocks of extent/blocks pixels; the last
/// block absorbs the remainder.
int block_index(int coord, int extent, int blocks);

/// Reads binary PPM (P6, maxval 255) or PNG, chosen by file signature.
Image load_image(const std::string& path);
void save_ppm(const Image& img, const std::string& path);
std::string encode_ppm(const Image& img);
Image decode_ppm(const std::string& bytes);

/// Grayscale P5 rendering of a saliency map, one pixel per patch unless scaled.
std::string encode_saliency_pgm(const SaliencyMap& s, int out_w, int out_h);
/// P5 with values {0, 255}.
std::string encode_mask_pgm(const BinaryMask& m);

}  // namespace a2t
