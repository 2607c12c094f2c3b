#include "mqa/box.hpp"

#include <cmath>
#include <tuple>

#include "mqa/error.hpp"

namespace mqa {

std::optional<std::string> box_violation(const Box& box) {
  for (double v : {box.x_min, box.y_min, box.x_max, box.y_max})
    if (!std::isfinite(v)) return "non-finite coordinate";
  if (box.x_min < 0.0 || box.y_min < 0.0) return "negative coordinate";
  if (!(box.x_max > box.x_min)) return "x_max <= x_min";
  if (!(box.y_max > box.y_min)) return "y_max <= y_min";
  return std::nullopt;
}

void require_valid(const Box& box, const char* what) {
  if (auto v = box_violation(box)) throw ValidationError(std::string(what) + ": " + *v);
}

bool origin_less(const Box& a, const Box& b) noexcept {
  return std::tie(a.x_min, a.y_min, a.x_max, a.y_max) < std::tie(b.x_min, b.y_min, b.x_max, b.y_max);
}

nlohmann::json to_json(const Box& box) { return nlohmann::json::array({box.x_min, box.y_min, box.x_max, box.y_max}); }

Box box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw ParseError("box must be an array of 4 numbers");
  for (const auto& v : j)
    if (!v.is_number()) throw ParseError("box must be an array of 4 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

const char* to_string(TransportErrorKind kind) noexcept {
  switch (kind) {
    case TransportErrorKind::network: return "network";
    case TransportErrorKind::auth: return "auth";
    case TransportErrorKind::rate_limited: return "rate_limited";
    case TransportErrorKind::server: return "server";
    case TransportErrorKind::rejected: return "rejected";
    case TransportErrorKind::malformed: return "malformed";
  }
  return "unknown";
}

}  // namespace mqa
