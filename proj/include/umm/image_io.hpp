#pragma once

#include <string>
#include <vector>

#include "umm/data.hpp"

namespace umm {

// Binary P6, 8-bit; values clamped to [0, 1] then scaled to 0-255.
std::vector<std::uint8_t> encode_ppm(const Image& img);
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// Grayscale heatmap of a [side, side] map in [0, 1], upscaled by `zoom`.
Image heatmap(const std::vector<float>& values, int side, int zoom = 4);

}  // namespace umm
