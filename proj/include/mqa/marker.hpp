#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mqa/box.hpp"
#include "mqa/detector.hpp"
#include "mqa/image.hpp"

namespace mqa {

struct MarkStyle {
  std::array<Rgb, 8> palette{{
      {230, 25, 75},
      {60, 180, 75},
      {255, 225, 25},
      {0, 130, 200},
      {245, 130, 48},
      {145, 30, 180},
      {70, 240, 240},
      {240, 50, 230},
  }};
  int badge_divisor = 24;  // badge diameter = min(width, height) / divisor
  int badge_min = 12;      // px
  int outline_width = 2;   // px
  Rgb badge_fill{20, 20, 20};
  Rgb glyph_color{255, 255, 255};
};

// Throws ConfigError on nonsensical values.
void validate(const MarkStyle& style);
MarkStyle mark_style_from_json(const nlohmann::json& j);

struct MarkGeometry {
  int mark = 0;
  int center_x = 0;
  int center_y = 0;
  Box box;
};

struct MarkedImage {
  std::vector<std::uint8_t> png;
  int width = 0;
  int height = 0;
  std::vector<MarkGeometry> geometry;
  std::string content_hash;  // pixel_hash of the rendered buffer
};

class DegenerateBoxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Clamps to [0,width] x [0,height]; throws DegenerateBoxError if no area survives.
Box clip_box(const Box& box, int width, int height);

// Half-up rounding of the box center to integer pixels.
std::pair<int, int> badge_center(const Box& box);

int badge_diameter(int width, int height, const MarkStyle& style);

// Box outlines, then one filled badge per candidate with its mark number in an
// embedded bitmap font. Deterministic in (pixels, detections, style).
MarkedImage render(const Image& image, const DetectionSet& detections, const MarkStyle& style = {});

// Same drawing primitives, exposed for visualization overlays.
void draw_box_outline(Image& image, const Box& box, Rgb color, int thickness);
void draw_number_badge(Image& image, int center_x, int center_y, int number, int diameter, Rgb fill, Rgb glyph);

// 5x7 glyph rows for digits 0-9; bit 4 is the leftmost column.
const std::array<std::uint8_t, 7>& digit_glyph(int digit);

}  // namespace mqa
