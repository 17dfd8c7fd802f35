#pragma once

#include <string>

#include "tensor.hpp"

namespace cfmn {

// Images are [C x H x W] tensors with values in [0, 1]; C is 1 or 3.

// Dispatches on the file's magic bytes (P5/P6/PNG signature).
Tensor read_image(const std::string& path);

// Deterministic byte-exact writers.
void write_pgm(const std::string& path, const Tensor& img);  // grayscale
void write_ppm(const std::string& path, const Tensor& img);  // RGB
// 8-bit non-interlaced PNG, gray or RGB to match the tensor.
void write_png(const std::string& path, const Tensor& img);

}  // namespace cfmn
