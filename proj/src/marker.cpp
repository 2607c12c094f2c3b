#include "mqa/marker.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mqa/error.hpp"

namespace mqa {

namespace {

constexpr std::array<std::array<std::uint8_t, 7>, 10> kDigits{{
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
}};

constexpr int kGlyphW = 5;
constexpr int kGlyphH = 7;

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

void fill_disc(Image& image, int cx, int cy, int diameter, Rgb color) {
  const int r = diameter / 2;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= r * r) image.set(cx + dx, cy + dy, color);
}

}  // namespace

const std::array<std::uint8_t, 7>& digit_glyph(int digit) { return kDigits.at(static_cast<std::size_t>(digit)); }

void validate(const MarkStyle& style) {
  if (style.badge_divisor < 1) throw ConfigError("marker badge_divisor must be >= 1");
  if (style.badge_min < 8) throw ConfigError("marker badge_min must be >= 8 px");
  if (style.outline_width < 1) throw ConfigError("marker outline_width must be >= 1");
}

MarkStyle mark_style_from_json(const nlohmann::json& j) {
  MarkStyle s;
  if (!j.is_object()) throw ConfigError("marker style must be an object");
  if (auto it = j.find("palette"); it != j.end()) {
    if (!it->is_array() || it->size() != s.palette.size()) throw ConfigError("marker palette must list 8 colors");
    for (std::size_t i = 0; i < s.palette.size(); ++i) {
      const auto& c = (*it)[i];
      if (!c.is_array() || c.size() != 3) throw ConfigError("marker palette colors are [r, g, b]");
      s.palette[i] = {c[0].get<std::uint8_t>(), c[1].get<std::uint8_t>(), c[2].get<std::uint8_t>()};
    }
  }
  s.badge_divisor = j.value("badge_divisor", s.badge_divisor);
  s.badge_min = j.value("badge_min", s.badge_min);
  s.outline_width = j.value("outline_width", s.outline_width);
  validate(s);
  return s;
}

Box clip_box(const Box& box, int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("clip_box: image size must be positive");
  for (double v : {box.x_min, box.y_min, box.x_max, box.y_max})
    if (!std::isfinite(v)) throw DegenerateBoxError("clip_box: non-finite coordinate");
  const double w = width, h = height;
  Box out{std::clamp(box.x_min, 0.0, w), std::clamp(box.y_min, 0.0, h), std::clamp(box.x_max, 0.0, w),
          std::clamp(box.y_max, 0.0, h)};
  if (!(out.x_max > out.x_min && out.y_max > out.y_min)) throw DegenerateBoxError("clip_box: no area left inside the image");
  return out;
}

std::pair<int, int> badge_center(const Box& box) {
  return {round_half_up((box.x_min + box.x_max) / 2.0), round_half_up((box.y_min + box.y_max) / 2.0)};
}

int badge_diameter(int width, int height, const MarkStyle& style) {
  return std::max(style.badge_min, std::min(width, height) / style.badge_divisor);
}

void draw_box_outline(Image& image, const Box& box, Rgb color, int thickness) {
  const int x0 = static_cast<int>(std::floor(box.x_min));
  const int y0 = static_cast<int>(std::floor(box.y_min));
  const int x1 = static_cast<int>(std::ceil(box.x_max)) - 1;
  const int y1 = static_cast<int>(std::ceil(box.y_max)) - 1;
  const int t = thickness - 1;
  image.fill_rect(x0, y0, x1, std::min(y0 + t, y1), color);
  image.fill_rect(x0, std::max(y1 - t, y0), x1, y1, color);
  image.fill_rect(x0, y0, std::min(x0 + t, x1), y1, color);
  image.fill_rect(std::max(x1 - t, x0), y0, x1, y1, color);
}

void draw_number_badge(Image& image, int cx, int cy, int number, int diameter, Rgb fill, Rgb glyph) {
  fill_disc(image, cx, cy, diameter, fill);

  const std::string digits = std::to_string(number);
  const int n = static_cast<int>(digits.size());
  int scale = std::max(1, (diameter * 6 / 10) / kGlyphH);
  auto text_width = [&](int s) { return n * kGlyphW * s + (n - 1) * s; };
  while (scale > 1 && text_width(scale) > diameter - 2) --scale;

  const int w = text_width(scale);
  const int h = kGlyphH * scale;
  const int ox = cx - w / 2;
  const int oy = cy - h / 2;
  for (int i = 0; i < n; ++i) {
    const auto& rows = digit_glyph(digits[static_cast<std::size_t>(i)] - '0');
    const int gx = ox + i * (kGlyphW + 1) * scale;
    for (int row = 0; row < kGlyphH; ++row)
      for (int col = 0; col < kGlyphW; ++col)
        if (rows[static_cast<std::size_t>(row)] & (0x10 >> col))
          image.fill_rect(gx + col * scale, oy + row * scale, gx + (col + 1) * scale - 1, oy + (row + 1) * scale - 1, glyph);
  }
}

MarkedImage render(const Image& image, const DetectionSet& detections, const MarkStyle& style) {
  if (image.empty()) throw ImageError("render: empty image");
  if (detections.empty()) throw ValidationError("render: no detections to mark");
  if (detections.marks.size() != detections.candidates.size()) throw ValidationError("render: marks not assigned");
  validate(style);

  Image canvas = image;
  MarkedImage out;
  out.width = image.width();
  out.height = image.height();

  for (std::size_t i = 0; i < detections.size(); ++i) {
    const int mark = detections.marks[i];
    const Box box = clip_box(detections.candidates[i].box, image.width(), image.height());
    draw_box_outline(canvas, box, style.palette[static_cast<std::size_t>(mark - 1) % style.palette.size()],
                     style.outline_width);
    const auto [cx, cy] = badge_center(box);
    out.geometry.push_back({mark, cx, cy, box});
  }

  const int diameter = badge_diameter(image.width(), image.height(), style);
  for (const auto& g : out.geometry) {
    const Rgb ring = style.palette[static_cast<std::size_t>(g.mark - 1) % style.palette.size()];
    fill_disc(canvas, g.center_x, g.center_y, diameter + 4, ring);
    draw_number_badge(canvas, g.center_x, g.center_y, g.mark, diameter, style.badge_fill, style.glyph_color);
  }

  out.png = encode_png(canvas);
  out.content_hash = pixel_hash(canvas);
  return out;
}

}  // namespace mqa
