#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sthoi/features.hpp"
#include "sthoi/geometry.hpp"
#include "sthoi/tensor.hpp"

namespace sthoi {

/// One keyframe-centred training / evaluation unit.
struct KeyframeSample {
  std::string video_id;
  int keyframe_index = 0;         // frame index of the keyframe inside the video
  std::size_t center = 0;         // position of the keyframe inside the window
  Tensor frames;                  // [3 x T x H x W], values in [0,1]
  std::vector<Trajectory> trajectories;
  // poses[i][t] for trajectory i; empty for non-person trajectories.
  std::vector<std::vector<std::optional<Pose>>> poses;
  std::vector<PairProposal> pairs;  // M x (N-1), ordered as enumerate_pairs
  Tensor gt;                        // [pairs x C] binary; empty when unlabeled

  std::size_t window() const { return frames.dim(1); }
  std::size_t height() const { return frames.dim(2); }
  std::size_t width() const { return frames.dim(3); }
};

/// Scored (human box, object box, object class, predicate) at one keyframe.
struct Detection {
  std::string video_id;
  int keyframe_index = 0;
  Box human_box;
  Box object_box;
  int object_category = 0;
  int predicate_id = 0;
  double score = 0.0;
};

/// Fills every trajectory of a sample with whole-frame boxes where invalid.
inline KeyframeSample filled(KeyframeSample s) {
  for (auto& t : s.trajectories) {
    t = fill_trajectory(t, static_cast<double>(s.width()), static_cast<double>(s.height()), s.center);
  }
  return s;
}

}  // namespace sthoi
