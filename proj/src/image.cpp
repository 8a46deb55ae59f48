#include "topogan/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>

#include "topogan/error.hpp"

namespace topogan {

namespace {

constexpr int kSeparator = 2;
constexpr double kSeparatorGray = 128.0 / 255.0;

std::array<double, 5> make_taps() {
  std::array<double, 5> taps{};
  double total = 0.0;
  for (int i = 0; i < 5; ++i) {
    taps[i] = std::exp(-0.5 * (i - 2) * (i - 2));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

}  // namespace

std::span<const double, 5> gaussian_taps() {
  static const std::array<double, 5> taps = make_taps();
  return taps;
}

Image threshold(const Image& image) {
  Image out = image;
  for (double& p : out.pixels) p = p >= 0.5 ? 1.0 : 0.0;
  return out;
}

Image gaussian_blur5(const Image& image) {
  if (image.width < 5 || image.height < 5) {
    throw DimensionError("blur needs at least a 5x5 image, got " + std::to_string(image.width) +
                         "x" + std::to_string(image.height));
  }
  const auto taps = gaussian_taps();
  Image rows(image.width, image.height);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) s += taps[k] * image.at(r, reflect(c + k - 2, image.width));
      rows.at(r, c) = s;
    }
  }
  Image out(image.width, image.height);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) s += taps[k] * rows.at(reflect(r + k - 2, image.height), c);
      out.at(r, c) = std::clamp(s, 0.0, 1.0);
    }
  }
  return out;
}

Image postprocess(const Image& image) { return gaussian_blur5(threshold(image)); }

Image montage(std::span<const Image> images, int k) {
  if (k < 1) throw ParameterError("montage needs k >= 1");
  if (images.empty()) throw DimensionError("montage of zero images");
  const int w = images.front().width;
  const int h = images.front().height;
  for (const auto& img : images) {
    if (img.width != w || img.height != h) throw DimensionError("montage images differ in size");
  }
  Image out(k * w + (k - 1) * kSeparator, k * h + (k - 1) * kSeparator, kSeparatorGray);
  for (int cell = 0; cell < k * k; ++cell) {
    const int gr = cell / k;
    const int gc = cell % k;
    const int r0 = gr * (h + kSeparator);
    const int c0 = gc * (w + kSeparator);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        out.at(r0 + r, c0 + c) =
            cell < static_cast<int>(images.size()) ? images[cell].at(r, c) : 0.0;
      }
    }
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const double v = std::clamp(image.pixels[i], 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || w < 1 || h < 1) throw FormatError("not an 8-bit P5 PGM", 0);
  in.get();
  const auto offset = static_cast<std::uint64_t>(in.tellg());
  std::string bytes(static_cast<std::size_t>(w) * h, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError("truncated PGM pixel data", offset + static_cast<std::uint64_t>(in.gcount()));
  }
  Image img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img.pixels[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  }
  return img;
}

}  // namespace topogan
