#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mcc {

// 8-bit RGB image in row-major (y, x, channel) order.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height
};

// Binary PPM (P6, maxval 255).
void write_ppm(const std::string& path, const RgbImage& img);
RgbImage read_ppm(const std::string& path);

// Grayscale PNG, one byte per pixel, values taken as-is.
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels);

// Indexed-color PNG with an explicit palette (up to 256 entries of RGB).
void write_png_indexed(const std::string& path, int width, int height,
                       const std::vector<std::uint8_t>& indices,
                       const std::vector<std::array<std::uint8_t, 3>>& palette);

// Palette for label maps: entry 0 black (background), entries 1..C the class
// hues used by the synthetic corpus, entry 255 white (ignore).
std::vector<std::array<std::uint8_t, 3>> label_palette(int num_classes);

}  // namespace mcc
