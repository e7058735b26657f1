#pragma once

#include <string>
#include <vector>

#include "rmm/tensor.hpp"

namespace rmm::io {

// 8-bit PNG -> [3,H,W] in [0,1]; grayscale files are replicated to 3 channels
Tensor read_png(const std::string& path);

// [1,H,W] or [3,H,W] in [0,1], clamped and rounded to 8 bits
void write_png(const std::string& path, const Tensor& image);

// min-max normalization to [0,1]; constant input maps to 0.5
Tensor normalize01(const Tensor& t);

// tiles [1,h,w] or [3,h,w] images into a grid with a 1px separator
Tensor tile_grid(const std::vector<Tensor>& tiles, int cols);

}  // namespace rmm::io
