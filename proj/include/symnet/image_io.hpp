#pragma once

// Binary PPM (P6) colour images and PGM (P5) grey masks, 8-bit only.

#include <cstdint>
#include <string>
#include <vector>

#include "symnet/tensor.hpp"

namespace symnet {

struct ImageU8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // 3 for PPM, 1 for PGM
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

ImageU8 read_ppm(const std::string& path);
ImageU8 read_pgm(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& img);
void write_pgm(const std::string& path, const ImageU8& img);

// [0, 255] -> [0, 1]; masks map any non-zero byte to 1.
template <typename T>
Tensor<T> image_to_tensor(const ImageU8& img);
template <typename T>
Tensor<T> mask_to_tensor(const ImageU8& img);

// Values are clamped to [0, 1] and scaled to bytes with rounding.
template <typename T>
ImageU8 tensor_to_gray(const Tensor<T>& map);

}  // namespace symnet
