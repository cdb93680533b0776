#pragma once

// 8-bit binary netpbm: P5 (grayscale) and P6 (RGB), maxval 255.
// Values map [0,1] -> 0..255 by round-half-up of v*255, and back by v/255.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "samtta/tensor.hpp"

namespace samtta {

struct Image {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // channel-first

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

  // [H,W] for one channel, [3,H,W] for three.
  Tensor tensor() const;
  bool operator==(const Image&) const = default;
};

std::uint8_t quantize(double v);

std::vector<std::uint8_t> encode_pnm(const Image& image);
Image decode_pnm(const std::vector<std::uint8_t>& bytes);

void write_pnm(const std::filesystem::path& path, const Image& image);
Image read_pnm(const std::filesystem::path& path);

// Per-image min-max rescale to [0,1]; constant images become all zero.
void normalize_minmax(Image& image);

// Replicates a single channel three times (the plain grayscale-to-RGB input).
Image replicate_channels(const Image& gray);

}  // namespace samtta
