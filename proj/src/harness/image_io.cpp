#include "edt/harness/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "edt/error.hpp"

namespace edt::harness {

std::uint8_t to_byte(double value) {
  const double v = std::clamp(value, -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
}

double from_byte(std::uint8_t byte) { return static_cast<double>(byte) / 127.5 - 1.0; }

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  if (image.pixels.size() != image.width * image.height) throw ArgumentError("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("write_pgm: cannot open " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw ArgumentError("write_pgm: write failed for " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("read_pgm: cannot open " + path.string());
  std::string magic;
  std::size_t maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255) throw ArgumentError("read_pgm: not an 8-bit P5 file: " + path.string());
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw ArgumentError("read_pgm: truncated " + path.string());
  return img;
}

GrayImage channel_strip(const Tensor<float>& images, std::size_t item) {
  if (images.rank() != 4) throw DimensionError("channel_strip: expected [N, C, H, W]");
  const std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
  GrayImage img{c * w, h, std::vector<std::uint8_t>(c * w * h)};
  const auto data = images.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        img.pixels[y * img.width + ch * w + x] = to_byte(data[((item * c + ch) * h + y) * w + x]);
      }
    }
  }
  return img;
}

GrayImage montage(const Tensor<float>& images) {
  GrayImage out;
  for (std::size_t i = 0; i < images.dim(0); ++i) {
    const auto strip = channel_strip(images, i);
    out.width = strip.width;
    out.height += strip.height;
    out.pixels.insert(out.pixels.end(), strip.pixels.begin(), strip.pixels.end());
  }
  return out;
}

}  // namespace edt::harness
