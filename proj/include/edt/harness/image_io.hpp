#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "edt/numerics/tensor.hpp"

namespace edt::harness {

/// Linear map [-1, 1] -> [0, 255]: round((clamp(v, -1, 1) + 1) * 127.5).
std::uint8_t to_byte(double value);
/// Inverse of the byte map: b / 127.5 - 1.
double from_byte(std::uint8_t byte);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Binary PGM (P5, maxval 255).
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

/// One item [C, H, W] with its channels side by side: width C*W, height H.
GrayImage channel_strip(const Tensor<float>& images, std::size_t item);

/// Every item as a channel strip, one item per row band.
GrayImage montage(const Tensor<float>& images);

}  // namespace edt::harness
