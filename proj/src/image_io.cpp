#include "celltopo/image_io.hpp"

#include <png.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace celltopo {

namespace fs = std::filesystem;

void atomic_write(const fs::path& path, const std::function<void(const fs::path&)>& writer) {
  if (path.has_parent_path() && !fs::exists(path.parent_path())) {
    throw std::runtime_error("output directory does not exist: " + path.parent_path().string());
  }
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  try {
    writer(tmp);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

void write_text_file(const fs::path& path, const std::string& contents) {
  atomic_write(path, [&](const fs::path& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out << contents;
    out.close();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  });
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_png(const fs::path& path, int width, int height, png_uint_32 format,
               const std::uint8_t* data) {
  atomic_write(path, [&](const fs::path& tmp) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;
    if (!png_image_write_to_file(&image, tmp.c_str(), 0, data, 0, nullptr)) {
      std::string msg = image.message;
      png_image_free(&image);
      throw std::runtime_error("PNG write failed for " + path.string() + ": " + msg);
    }
  });
}

std::vector<std::uint8_t> read_png(const fs::path& path, png_uint_32 format, int& width,
                                   int& height) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  return buffer;
}

}  // namespace

void write_png_gray(const fs::path& path, const Grid& image) {
  int height = 0, width = 0;
  if (image.rank() == 3 && image.dim(0) == 1) {
    height = image.dim(1);
    width = image.dim(2);
  } else if (image.rank() == 2) {
    height = image.dim(0);
    width = image.dim(1);
  } else {
    throw std::invalid_argument("grayscale PNG needs a 1 x H x W grid, got " +
                                shape_string(image.shape()));
  }
  std::vector<std::uint8_t> bytes(image.size());
  std::transform(image.values().begin(), image.values().end(), bytes.begin(), to_byte);
  write_png(path, width, height, PNG_FORMAT_GRAY, bytes.data());
}

Grid read_png_gray(const fs::path& path) {
  int width = 0, height = 0;
  auto bytes = read_png(path, PNG_FORMAT_GRAY, width, height);
  Grid out({1, height, width});
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] / 255.0;
  return out;
}

void write_png_rgb(const fs::path& path, const RgbImage& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw std::invalid_argument("RGB image buffer does not match its dimensions");
  }
  write_png(path, image.width, image.height, PNG_FORMAT_RGB, image.pixels.data());
}

RgbImage read_png_rgb(const fs::path& path) {
  RgbImage out;
  out.pixels = read_png(path, PNG_FORMAT_RGB, out.width, out.height);
  return out;
}

Grid quantize_8bit(const Grid& image) {
  Grid out = image;
  for (double& v : out.values()) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace celltopo
