#pragma once

#include <string>

#include "fgmamba/tensor.hpp"

namespace fgmamba {

// 8-bit binary PGM (P5, grayscale) and PPM (P6, RGB) rasters. Pixels load to
// [0, 1] as v / 255 and store back with round-half-up clamping, so byte-valued
// images round-trip exactly.
Tensor<float> load_image(const std::string& path);                 // (C, H, W), C in {1, 3}
void save_image(const std::string& path, const Tensor<float>& chw);

uint8_t quantize_unit(float v);  // clamp + round-half-up to [0, 255]

}  // namespace fgmamba
