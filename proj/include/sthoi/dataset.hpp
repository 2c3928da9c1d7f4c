#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sthoi/annotation.hpp"
#include "sthoi/frames.hpp"
#include "sthoi/keyframes.hpp"
#include "sthoi/sample.hpp"

namespace sthoi {

struct WindowConfig {
  std::size_t length = 8;  // T
  std::size_t stride = 1;  // frame step inside the window
  bool clamp_edges = true;  // repeat the first/last frame past the clip ends; else zero frames, no boxes

  std::size_t center() const { return length / 2; }

  /// Source frame of window slot `i`, or -1 when it falls outside [0, frame_count).
  int frame_at(int keyframe, std::size_t i, int frame_count) const {
    const int f = keyframe + (static_cast<int>(i) - static_cast<int>(center())) * static_cast<int>(stride);
    if (f >= 0 && f < frame_count) return f;
    return clamp_edges ? std::clamp(f, 0, frame_count - 1) : -1;
  }
};

/// Builds the window centred at `keyframe`. Trajectories come from `tracks`
/// (ground truth in Oracle mode, an external tracker in Detection mode); labels
/// come from `labels` and are attached only when `tracks` is the same video object.
inline KeyframeSample build_sample(const VideoAnnotation& labels, const VideoAnnotation& tracks,
                                   const VideoFrames& frames, int keyframe, const WindowConfig& win,
                                   const Taxonomy& tax) {
  if (frames.frame_count == 0) throw InputError("video " + labels.video_id + ": no frames");
  if (frames.width != static_cast<std::uint32_t>(labels.width) ||
      frames.height != static_cast<std::uint32_t>(labels.height)) {
    throw InputError("video " + labels.video_id + ": frame container size differs from annotation");
  }
  KeyframeSample s;
  s.video_id = labels.video_id;
  s.keyframe_index = keyframe;
  s.center = win.center();
  const std::size_t T = win.length, H = frames.height, W = frames.width;
  s.frames = Tensor(Shape{3, T, H, W});
  for (std::size_t i = 0; i < T; ++i) {
    const int f = win.frame_at(keyframe, i, static_cast<int>(frames.frame_count));
    if (f < 0) continue;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          s.frames[((c * T + i) * H + y) * W + x] =
              static_cast<double>(frames.at(static_cast<std::size_t>(f), y, x, c)) / 255.0;
        }
      }
    }
  }
  for (const Instance* inst : instances_at(tracks, keyframe)) {
    Trajectory t;
    t.instance_id = inst->instance_id;
    t.category_id = category_id(tax, inst->category);
    std::vector<std::optional<Pose>> poses;
    for (std::size_t i = 0; i < T; ++i) {
      const int f = win.frame_at(keyframe, i, static_cast<int>(frames.frame_count));
      const auto b = f < 0 ? std::nullopt : tracks.box_at(f, inst->instance_id);
      t.boxes.push_back(b.value_or(Box{}));
      t.valid.push_back(b.has_value());
      if (t.is_person()) {
        auto it = tracks.poses.find({f, inst->instance_id});
        poses.push_back(it == tracks.poses.end() ? std::nullopt : std::optional<Pose>(it->second));
      }
    }
    s.trajectories.push_back(std::move(t));
    s.poses.push_back(std::move(poses));
  }
  s.pairs = enumerate_pairs(s.trajectories);
  if (&labels == &tracks) s.gt = convert_labels(labels, keyframe, tax).gt;
  return s;
}

/// One split of a dataset directory: annotations plus decoded frames.
struct Split {
  AnnotationSet ann;
  std::map<std::string, VideoFrames> frames;
  std::vector<KeyframeRef> keyframes;
};

struct DatasetLayout {
  std::filesystem::path root;

  std::filesystem::path taxonomy() const { return root / "taxonomy.json"; }
  std::filesystem::path annotations(const std::string& split) const { return root / (split + ".json"); }
  std::filesystem::path frames_dir() const { return root / "frames"; }
  std::filesystem::path frames(const std::string& video_id) const {
    return frames_dir() / (video_id + ".vhfr");
  }
};

inline Split load_split(const DatasetLayout& layout, const std::string& name, KeyframeFilter filter) {
  Split s;
  s.ann = load_annotations(layout.annotations(name).string());
  for (const auto& v : s.ann.videos) s.frames.emplace(v.video_id, vhfr::load(layout.frames(v.video_id).string()));
  s.keyframes = sample_keyframes(s.ann, filter);
  return s;
}

inline Taxonomy load_taxonomy(const std::string& path) { return parse_taxonomy(read_json_file(path)); }

/// Samples for every keyframe of a split. When `tracks` is given (Detection
/// mode) trajectories come from it; videos it lacks yield samples without pairs.
inline std::vector<KeyframeSample> build_samples(const Split& split, const Taxonomy& tax,
                                                 const WindowConfig& win,
                                                 const AnnotationSet* tracks = nullptr) {
  std::vector<KeyframeSample> out;
  out.reserve(split.keyframes.size());
  for (const auto& kf : split.keyframes) {
    const auto* v = split.ann.find(kf.video_id);
    const auto& frames = split.frames.at(kf.video_id);
    if (!tracks) {
      out.push_back(build_sample(*v, *v, frames, kf.frame, win, tax));
      continue;
    }
    const auto* tv = tracks->find(kf.video_id);
    if (tv) {
      out.push_back(build_sample(*v, *tv, frames, kf.frame, win, tax));
    } else {
      VideoAnnotation empty = *v;
      empty.instances.clear();
      empty.boxes.clear();
      empty.poses.clear();
      out.push_back(build_sample(*v, empty, frames, kf.frame, win, tax));
    }
  }
  return out;
}

}  // namespace sthoi
