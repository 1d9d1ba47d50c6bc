#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lshift {

struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major RGB triples
};

/// Planar (3,H,W) floats in [0,1] to 8-bit RGB, clamping and rounding;
/// each pixel is repeated `upscale` times in both directions.
Image8 to_image(std::span<const float> planar, int height, int width, int upscale = 1);

std::vector<std::uint8_t> encode_png(const Image8& img);
std::vector<std::uint8_t> encode_ppm(const Image8& img);
/// Looping GIF89a on a fixed 3-3-2 RGB palette; delay in 1/100 s per frame.
std::vector<std::uint8_t> encode_gif(const std::vector<Image8>& frames, int delay_cs = 20);

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace lshift
