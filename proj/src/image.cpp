#include "a2t/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <sstream>

#include <png.h>

#include "a2t/errors.hpp"
#include "a2t/io_util.hpp"

namespace a2t {

int block_index(int coord, int extent, int blocks) {
  const int step = extent / blocks;
  return std::min(coord / step, blocks - 1);
}

std::size_t BinaryMask::popcount() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

double BinaryMask::coverage() const {
  return bits.empty() ? 0.0 : static_cast<double>(popcount()) / static_cast<double>(bits.size());
}

namespace {

// Skips whitespace and '#' comments between PNM header tokens.
int read_header_int(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
    throw ImageError("malformed PPM header");
  long value = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + (bytes[pos] - '0');
    if (value > 1'000'000) throw ImageError("PPM dimension out of range");
    ++pos;
  }
  return static_cast<int>(value);
}

Image decode_png(const std::string& bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw ImageError(std::string("malformed PNG: ") + img.message);
  img.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ImageError(std::string("malformed PNG: ") + img.message);
  }
  return out;
}

}  // namespace

Image decode_ppm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ImageError("not a binary PPM (P6)");
  std::size_t pos = 2;
  const int w = read_header_int(bytes, pos);
  const int h = read_header_int(bytes, pos);
  const int maxval = read_header_int(bytes, pos);
  if (w <= 0 || h <= 0) throw ImageError("PPM has empty dimensions");
  if (maxval != 255) throw ImageError("only maxval 255 PPM is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw ImageError("malformed PPM header");
  ++pos;
  Image img(w, h);
  if (bytes.size() - pos < img.pixels.size()) throw ImageError("truncated PPM pixel data");
  std::memcpy(img.pixels.data(), bytes.data() + pos, img.pixels.size());
  return img;
}

std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

Image load_image(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error& e) {
    throw ImageError(e.what());
  }
  static constexpr unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) return decode_png(bytes);
  return decode_ppm(bytes);
}

void save_ppm(const Image& img, const std::string& path) { write_file_atomic(path, encode_ppm(img)); }

std::string encode_saliency_pgm(const SaliencyMap& s, int out_w, int out_h) {
  std::string out = "P5\n" + std::to_string(out_w) + " " + std::to_string(out_h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(out_w) * out_h);
  for (int y = 0; y < out_h; ++y) {
    const int r = block_index(y, out_h, s.rows);
    for (int x = 0; x < out_w; ++x) {
      const double v = std::clamp(s.at(r, block_index(x, out_w, s.cols)), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    }
  }
  return out;
}

std::string encode_mask_pgm(const BinaryMask& m) {
  std::string out = "P5\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
  for (std::uint8_t b : m.bits) out.push_back(static_cast<char>(b ? 255 : 0));
  return out;
}

}  // namespace a2t
