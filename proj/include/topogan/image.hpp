#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace topogan {

/// Grayscale image, row-major, row 0 at the top.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  bool operator==(const Image&) const = default;
};

/// Pixels >= 0.5 become 1, others 0.
Image threshold(const Image& image);

/// Normalized 5x5 Gaussian (sigma 1) with half-sample symmetric borders.
/// Throws DimensionError for images smaller than 5x5.
Image gaussian_blur5(const Image& image);

/// threshold followed by gaussian_blur5.
Image postprocess(const Image& image);

/// The 5-tap 1D kernel whose outer product is the 2D blur kernel.
std::span<const double, 5> gaussian_taps();

/// k x k grid of equally sized images with 2-pixel separators at gray 128.
/// Missing cells stay black.
Image montage(std::span<const Image> images, int k);

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);

}  // namespace topogan
