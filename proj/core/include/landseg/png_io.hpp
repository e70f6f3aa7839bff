#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace landseg::png {

struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

Image8 read(const std::string& path);

void write_rgb8(const std::string& path, int height, int width, const std::vector<std::uint8_t>& pixels);
void write_gray8(const std::string& path, int height, int width, const std::vector<std::uint8_t>& pixels);
void write_gray16(const std::string& path, int height, int width, const std::vector<std::uint16_t>& pixels);

}  // namespace landseg::png
