#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sthoi/error.hpp"

namespace sthoi {

/// Axis-aligned box in continuous pixel coordinates, corners (x1,y1) and (x2,y2).
/// Area carries no "+1" pixel correction.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  bool is_valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 <= x2 && y1 <= y2;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

inline void validate(const Box& b) {
  if (!b.is_valid()) {
    throw InputError(detail::concat("invalid box (", b.x1, ",", b.y1, ",", b.x2, ",", b.y2, ")"));
  }
}

/// Intersection over union. Zero whenever the union has zero area.
inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// Smallest box containing both inputs.
inline Box union_box(const Box& a, const Box& b) {
  return Box{std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

/// Clips a box to [0,w]x[0,h]. The result may be degenerate.
inline Box clip_box(const Box& b, double w, double h) {
  Box c{std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h), std::clamp(b.x2, 0.0, w),
        std::clamp(b.y2, 0.0, h)};
  return c;
}

inline constexpr int kPersonCategory = 0;

/// Per-frame boxes of one instance over a T-frame segment.
struct Trajectory {
  std::string instance_id;
  int category_id = 0;
  std::vector<Box> boxes;
  std::vector<bool> valid;

  std::size_t length() const { return boxes.size(); }
  bool is_person() const { return category_id == kPersonCategory; }

  bool all_valid() const {
    return std::all_of(valid.begin(), valid.end(), [](bool v) { return v; });
  }

  /// Reverses the time axis.
  Trajectory reversed() const {
    Trajectory r = *this;
    std::reverse(r.boxes.begin(), r.boxes.end());
    std::vector<bool> v(valid.rbegin(), valid.rend());
    r.valid = std::move(v);
    return r;
  }
};

/// Indices of a (human, object) pair into a trajectory list.
struct PairProposal {
  std::size_t human_index = 0;
  std::size_t object_index = 0;

  friend bool operator==(const PairProposal&, const PairProposal&) = default;
};

/// Replaces every invalid entry with the whole-image box (0,0,frame_w,frame_h).
/// When `keyframe_index` is given, an invalid keyframe entry is treated as a
/// corrupt annotation and rejected.
inline Trajectory fill_trajectory(const Trajectory& t, double frame_w, double frame_h,
                                  std::optional<std::size_t> keyframe_index = std::nullopt) {
  if (!(frame_w > 0.0) || !(frame_h > 0.0)) {
    throw InputError("fill_trajectory: frame dimensions must be positive");
  }
  if (t.boxes.size() != t.valid.size()) {
    throw InputError(detail::concat("trajectory ", t.instance_id, ": ", t.boxes.size(),
                                    " boxes but ", t.valid.size(), " validity flags"));
  }
  if (keyframe_index && (*keyframe_index >= t.valid.size() || !t.valid[*keyframe_index])) {
    throw InputError(detail::concat("trajectory ", t.instance_id,
                                    ": keyframe entry is missing (corrupt annotation)"));
  }
  Trajectory out = t;
  for (std::size_t i = 0; i < out.boxes.size(); ++i) {
    if (!out.valid[i]) {
      out.boxes[i] = Box{0.0, 0.0, frame_w, frame_h};
      out.valid[i] = true;
    }
  }
  return out;
}

/// All M x (N-1) ordered pairs: every person trajectory against every other trajectory.
/// Ordered by human index, then object index.
inline std::vector<PairProposal> enumerate_pairs(const std::vector<Trajectory>& trajs) {
  std::vector<PairProposal> pairs;
  for (std::size_t h = 0; h < trajs.size(); ++h) {
    if (!trajs[h].is_person()) continue;
    for (std::size_t o = 0; o < trajs.size(); ++o) {
      if (o != h) pairs.push_back({h, o});
    }
  }
  return pairs;
}

}  // namespace sthoi
