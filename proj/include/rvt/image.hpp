#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rvt/tensor.hpp"

namespace rvt {

struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Binary (P5) portable graymap, maxval 255.
void write_pgm(const std::string& path, const Image8& img);
Image8 read_pgm(const std::string& path);

// Binary (P6) portable pixmap; rgb has 3 bytes per pixel.
void write_ppm(const std::string& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb);

// [0,1] doubles <-> 8-bit, rounding to nearest.
Image8 quantize_frame(const double* values, std::size_t height, std::size_t width);
std::vector<double> dequantize_frame(const Image8& img);

// Exact box-filter resampling of the trailing two axes of a (...,H,W) tensor.
// Output pixels average the overlapped input area; handles non-integer
// ratios. Produces a plain leaf tensor (no gradient link).
Tensor resize_area(const Tensor& t, std::size_t out_h, std::size_t out_w);

}  // namespace rvt
