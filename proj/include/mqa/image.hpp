#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mqa {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

// Packed 8-bit RGB, row-major.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {});

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }

  Rgb at(int x, int y) const;
  // Out-of-bounds writes are ignored.
  void set(int x, int y, Rgb c) noexcept;
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c) noexcept;  // inclusive bounds

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// PNG or JPEG, sniffed from the leading bytes. Throws ImageError.
Image decode_image(std::span<const std::uint8_t> encoded);
std::vector<std::uint8_t> encode_png(const Image& image);

// SHA-256 over the dimensions and the raw pixel buffer; independent of the encoder.
std::string pixel_hash(const Image& image);

}  // namespace mqa
