#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ris/tensor.hpp"

namespace ris {

// Binary portable pixmaps: P5 (grayscale) and P6 (RGB), maxval 255, header
// fields in decimal text. Values map linearly between [0,1] and [0,255].

namespace detail {

inline int next_pnm_int(std::istream& in, const std::string& path) {
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      in.unget();
      break;
    }
  }
  int value;
  if (!(in >> value)) throw std::runtime_error("pnm: malformed header in " + path);
  return value;
}

inline std::uint8_t quantize(double v) {
  const double scaled = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(scaled);
}

}  // namespace detail

// image: [1,H,W] -> P5, [3,H,W] -> P6
template <typename T>
void write_image(const std::string& path, const Tensor<T>& image) {
  if (image.shape.size() != 3 || (image.shape[0] != 1 && image.shape[0] != 3))
    throw std::invalid_argument("write_image: need [1,H,W] or [3,H,W], got " +
                                shape_str(image.shape));
  const int c = image.shape[0], h = image.shape[1], w = image.shape[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_image: cannot open " + path);
  out << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        row[static_cast<std::size_t>(x) * c + ch] =
            detail::quantize(static_cast<double>(image.at3(ch, y, x)));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write_image: write failed for " + path);
}

template <typename T>
Tensor<T> read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_image: cannot open " + path);
  std::string magic;
  in >> magic;
  int channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw std::runtime_error("read_image: unsupported magic '" + magic + "' in " +
                             path);
  const int w = detail::next_pnm_int(in, path);
  const int h = detail::next_pnm_int(in, path);
  const int maxval = detail::next_pnm_int(in, path);
  if (w < 1 || h < 1 || maxval != 255)
    throw std::runtime_error("read_image: unsupported header in " + path);
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw std::runtime_error("read_image: truncated payload in " + path);
  Tensor<T> out(Shape{channels, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < channels; ++ch)
        out.at3(ch, y, x) =
            static_cast<T>(raw[(static_cast<std::size_t>(y) * w + x) * channels + ch] /
                           255.0);
  return out;
}

// Binary mask [H,W] with values {0,1} stored as a 0/255 graymap.
template <typename T>
void write_mask(const std::string& path, const Tensor<T>& mask) {
  if (mask.shape.size() != 2)
    throw std::invalid_argument("write_mask: need [H,W], got " + shape_str(mask.shape));
  Tensor<T> as_image(Shape{1, mask.shape[0], mask.shape[1]});
  for (std::int64_t i = 0; i < mask.size(); ++i)
    as_image[i] = mask[i] > T(0.5) ? T(1) : T(0);
  write_image(path, as_image);
}

// Reads a mask and enforces that the file is strictly binary (0 or 255).
template <typename T>
Tensor<T> read_mask(const std::string& path) {
  Tensor<T> img = read_image<T>(path);
  if (img.shape[0] != 1)
    throw std::runtime_error("read_mask: mask must be grayscale: " + path);
  Tensor<T> mask(Shape{img.shape[1], img.shape[2]});
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    const double v = static_cast<double>(img[i]);
    if (v != 0.0 && v != 1.0)
      throw std::runtime_error("read_mask: non-binary pixel in " + path);
    mask[i] = static_cast<T>(v);
  }
  return mask;
}

}  // namespace ris
