#pragma once

// Fixed scenes shared by the unit and acceptance tests.

#include "mqa/detector.hpp"
#include "mqa/image.hpp"

namespace mqa::golden {

inline Image gradient_image(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.set(x, y, {static_cast<std::uint8_t>(x * 3 % 256), static_cast<std::uint8_t>(y * 5 % 256),
                     static_cast<std::uint8_t>((x + y) % 256)});
  return img;
}

// Three candidates, one reaching past the bottom-left corner.
inline DetectionSet marker_scene() {
  return assign_marks({Candidate{Box{10, 10, 70, 60}, 0.9, "a", 1}, Candidate{Box{60, 40, 150, 110}, 0.8, "b", 1},
                       Candidate{Box{0, 90, 30, 120}, 0.7, "c", 1}});
}

// pixel_hash of render(gradient_image(160, 120), marker_scene()).
inline constexpr const char* kMarkerSceneHash = "52d3f405a97ff052e7f7d0196a8d289b32faf7ca21966bf3becc4940d1f757d8";

}  // namespace mqa::golden
