#pragma once

#include <optional>
#include <string>

#include <json.hpp>

namespace mqa {

// Axis-aligned box in absolute pixel coordinates, origin top-left,
// [x_min, y_min, x_max, y_max].
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }

  bool operator==(const Box&) const = default;
};

// Returns a description of the first violated invariant, or nullopt for a valid box.
std::optional<std::string> box_violation(const Box& box);
inline bool is_valid(const Box& box) { return !box_violation(box).has_value(); }

// Throws ValidationError when the box is invalid.
void require_valid(const Box& box, const char* what = "box");

// Lexicographic (x_min, y_min, x_max, y_max).
bool origin_less(const Box& a, const Box& b) noexcept;

nlohmann::json to_json(const Box& box);
// Accepts a 4-element numeric array; throws ParseError otherwise. Does not validate.
Box box_from_json(const nlohmann::json& j);

}  // namespace mqa
