#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "csvt/tensor.hpp"

namespace csvt {

// 8-bit raster, row-major, channel-last. channels is 1, 3 or 4.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> bytes;
};

RawImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const RawImage& img);

RawImage read_png(const std::string& path);
void write_png(const std::string& path, const RawImage& img);

void write_pgm(const std::string& path, int width, int height, const std::vector<uint8_t>& gray);

// Dispatch by extension (.ppm, .png).
RawImage read_image(const std::string& path);
void write_image(const std::string& path, const RawImage& img);

// Temp file + rename; partially written artifacts never appear at `path`.
void write_file_atomic(const std::string& path, const void* data, size_t size);
void write_text_atomic(const std::string& path, const std::string& text);

template <class T>
Tensor<T> image_to_tensor(const RawImage& img) {
  if (img.channels != 1 && img.channels != 3 && img.channels != 4)
    throw std::invalid_argument("image_to_tensor: unsupported channel count");
  Tensor<T> t({img.height, img.width, 3});
  auto& out = t.values_mut();
  const size_t pixels = static_cast<size_t>(img.width) * img.height;
  for (size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < 3; ++c) {
      const int src = img.channels == 1 ? 0 : c;  // alpha dropped
      out[p * 3 + c] = static_cast<T>(img.bytes[p * img.channels + src]) / T(255);
    }
  return t;
}

template <class T>
RawImage tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(2) != 3) throw std::invalid_argument("tensor_to_image: expected h x w x 3");
  RawImage img;
  img.height = t.dim(0);
  img.width = t.dim(1);
  img.channels = 3;
  img.bytes.resize(t.numel());
  for (size_t i = 0; i < t.numel(); ++i) {
    const double v = std::clamp(static_cast<double>(t[i]), 0.0, 1.0);
    img.bytes[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

}  // namespace csvt
