#pragma once

#include "celltopo/grid.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace celltopo {

/// 8-bit interleaved RGB image.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
  }
};

/// Writes through a temporary sibling file renamed into place, so a failed
/// writer never leaves a partial output behind.
void atomic_write(const std::filesystem::path& path,
                  const std::function<void(const std::filesystem::path& tmp)>& writer);
void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

/// Grayscale PNG from a 1 x H x W (or H x W) grid; values are clamped to
/// [0,1] and quantized as round(255 v).
void write_png_gray(const std::filesystem::path& path, const Grid& image);
/// Grayscale PNG as a 1 x H x W grid with values byte / 255.
Grid read_png_gray(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png_rgb(const std::filesystem::path& path);

/// Applies the 8-bit quantization used by write_png_gray.
Grid quantize_8bit(const Grid& image);

}  // namespace celltopo
