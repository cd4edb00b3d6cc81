#include "umm/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace umm {

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (float v : img.rgb) {
    double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
  }
  return out;
}

void write_ppm(const std::string& path, const Image& img) {
  auto bytes = encode_ppm(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  f >> magic >> w >> h >> maxv;
  f.get();
  if (magic != "P6" || w <= 0 || h <= 0 || maxv != 255) throw std::runtime_error("unsupported PPM: " + path);
  Image img(h, w);
  std::vector<char> raw(img.rgb.size());
  f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("truncated PPM: " + path);
  for (std::size_t i = 0; i < raw.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(raw[i]) / 255.0f;
  return img;
}

Image heatmap(const std::vector<float>& values, int side, int zoom) {
  if (static_cast<int>(values.size()) != side * side) throw std::invalid_argument("heatmap size mismatch");
  Image img(side * zoom, side * zoom);
  for (int y = 0; y < side * zoom; ++y)
    for (int x = 0; x < side * zoom; ++x) {
      float v = values[(y / zoom) * side + x / zoom];
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
    }
  return img;
}

}  // namespace umm
