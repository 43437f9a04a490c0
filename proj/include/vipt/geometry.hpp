#pragma once

#include <algorithm>
#include <array>

namespace vipt {

// Center form (cx, cy, w, h). Normalized coordinates unless stated otherwise.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  std::array<double, 4> corners() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
  std::array<double, 4> as_array() const { return {cx, cy, w, h}; }
  Box clamped() const {
    auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
    return {c(cx), c(cy), c(w), c(h)};
  }
  bool operator==(const Box&) const = default;
};

// Top-left form (x, y, w, h), pixels.
struct Rect {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
  bool operator==(const Rect&) const = default;
};

inline Rect to_rect(const Box& b) { return {b.cx - b.w / 2, b.cy - b.h / 2, b.w, b.h}; }
inline Box to_box(const Rect& r) { return {r.cx(), r.cy(), r.w, r.h}; }

}  // namespace vipt
