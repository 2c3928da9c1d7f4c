#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "sthoi/annotation.hpp"
#include "sthoi/dataset.hpp"
#include "sthoi/frames.hpp"

namespace sthoi {

/// Moving-rectangle world with kinematically defined predicates.
struct SyntheticSpec {
  std::uint64_t seed = 0;
  int num_train_videos = 200;
  int num_val_videos = 50;
  int width = 32;
  int height = 32;
  double fps = 8.0;
  double duration_s = 2.0;
  std::vector<std::string> predicate_kit = {"towards", "away", "next_to", "hold"};
  bool distractors = true;  // adds "lift": hold while both wrists are above the head
  std::vector<std::string> object_categories = {"ball", "cup", "bag"};
  int max_objects = 2;
  double speed_min = 0.015;  // fraction of frame width per frame
  double speed_max = 0.025;
  double next_to_tau = 0.3;  // next_to: centre distance < tau * width throughout
  double approach_spread = 0.35;  // radians around the horizontal for approaching objects
  bool two_sided = false;         // approach from both sides, not only from the right
  double person_speed_min = 0.03;  // person drift, fraction of width per frame
  double person_speed_max = 0.045;
  bool render_arms = true;  // arms visible in pixels as well as in the pose stream

  int frame_count() const { return static_cast<int>(std::lround(duration_s * fps)) + 1; }

  void validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
      throw InputError("synthetic spec field '" + field + "': " + why);
    };
    if (num_train_videos < 0) bad("num_train_videos", "must be >= 0");
    if (num_val_videos < 0) bad("num_val_videos", "must be >= 0");
    if (width < 16) bad("width", "must be >= 16");
    if (height < 16) bad("height", "must be >= 16");
    if (!(fps > 0.0)) bad("fps", "must be positive");
    if (!(duration_s > 0.0)) bad("duration_s", "must be positive");
    if (max_objects < 1) bad("max_objects", "must be >= 1");
    if (!(speed_min > 0.0) || speed_max < speed_min) bad("speed_min", "need 0 < speed_min <= speed_max");
    if (!(next_to_tau > 0.0)) bad("next_to_tau", "must be positive");
    if (person_speed_min < 0.0 || person_speed_max < person_speed_min) {
      bad("person_speed_min", "need 0 <= person_speed_min <= person_speed_max");
    }
    if (!(approach_spread >= 0.0 && approach_spread <= std::numbers::pi)) bad("approach_spread", "must be in [0, pi]");
    if (object_categories.empty()) bad("object_categories", "must not be empty");
    static const std::vector<std::string> known = {"towards", "away", "next_to", "hold"};
    for (const auto& p : predicate_kit) {
      if (std::find(known.begin(), known.end(), p) == known.end()) {
        bad("predicate_kit", "unknown predicate " + p);
      }
    }
  }
};

inline SyntheticSpec parse_synthetic_spec(const json& j) {
  SyntheticSpec s;
  static const std::set<std::string> keys = {
      "seed", "num_train_videos", "num_val_videos", "width", "height", "fps", "duration_s",
      "predicate_kit", "distractors", "object_categories", "max_objects", "speed_min", "speed_max",
      "next_to_tau", "approach_spread", "two_sided", "person_speed_min", "person_speed_max", "render_arms"};
  if (!j.is_object()) throw InputError("synthetic spec: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!keys.count(it.key())) throw InputError("synthetic spec field '" + it.key() + "': unknown field");
  }
  auto read = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const json::exception&) {
      throw InputError(std::string("synthetic spec field '") + key + "': wrong type");
    }
  };
  read("seed", s.seed);
  read("num_train_videos", s.num_train_videos);
  read("num_val_videos", s.num_val_videos);
  read("width", s.width);
  read("height", s.height);
  read("fps", s.fps);
  read("duration_s", s.duration_s);
  read("predicate_kit", s.predicate_kit);
  read("distractors", s.distractors);
  read("object_categories", s.object_categories);
  read("max_objects", s.max_objects);
  read("speed_min", s.speed_min);
  read("speed_max", s.speed_max);
  read("next_to_tau", s.next_to_tau);
  read("approach_spread", s.approach_spread);
  read("two_sided", s.two_sided);
  read("person_speed_min", s.person_speed_min);
  read("person_speed_max", s.person_speed_max);
  read("render_arms", s.render_arms);
  s.validate();
  return s;
}

inline json synthetic_spec_json(const SyntheticSpec& s) {
  return json{{"seed", s.seed},
              {"num_train_videos", s.num_train_videos},
              {"num_val_videos", s.num_val_videos},
              {"width", s.width},
              {"height", s.height},
              {"fps", s.fps},
              {"duration_s", s.duration_s},
              {"predicate_kit", s.predicate_kit},
              {"distractors", s.distractors},
              {"object_categories", s.object_categories},
              {"max_objects", s.max_objects},
              {"speed_min", s.speed_min},
              {"speed_max", s.speed_max},
              {"next_to_tau", s.next_to_tau},
              {"approach_spread", s.approach_spread},
              {"two_sided", s.two_sided},
              {"person_speed_min", s.person_speed_min},
              {"person_speed_max", s.person_speed_max},
              {"render_arms", s.render_arms}};
}

struct SyntheticDataset {
  Taxonomy taxonomy;
  AnnotationSet train;
  AnnotationSet val;
  std::map<std::string, VideoFrames> frames;
  /// (towards-bearing video, its time-reversed twin) in generation order.
  std::vector<std::pair<std::string, std::string>> twins;
};

namespace synth {

inline constexpr std::array<std::uint8_t, 3> kBackground = {24, 24, 32};
inline constexpr std::array<std::uint8_t, 3> kPersonColor = {230, 190, 60};
inline constexpr std::array<std::uint8_t, 3> kArmColor = {255, 255, 255};
inline constexpr std::array<std::array<std::uint8_t, 3>, 6> kCategoryColors = {{
    {220, 60, 60}, {60, 200, 80}, {70, 110, 230}, {200, 80, 200}, {80, 210, 210}, {240, 140, 40}}};

/// Straight-limb 17-joint skeleton anchored in the person box.
inline Pose make_pose(const Box& b, bool arms_raised) {
  const double cx = b.cx(), w = b.width(), h = b.height(), y = b.y1;
  Pose p;
  auto set = [&](std::size_t j, double px, double py) {
    p.keypoints[j] = {px, py};
    p.valid[j] = true;
  };
  set(0, cx, y + 0.08 * h);
  set(1, cx - 0.08 * w, y + 0.06 * h);
  set(2, cx + 0.08 * w, y + 0.06 * h);
  set(3, cx - 0.16 * w, y + 0.08 * h);
  set(4, cx + 0.16 * w, y + 0.08 * h);
  set(5, cx - 0.32 * w, y + 0.22 * h);
  set(6, cx + 0.32 * w, y + 0.22 * h);
  if (arms_raised) {
    set(7, cx - 0.45 * w, y + 0.12 * h);
    set(8, cx + 0.45 * w, y + 0.12 * h);
    set(9, cx - 0.3 * w, y + 0.01 * h);
    set(10, cx + 0.3 * w, y + 0.01 * h);
  } else {
    set(7, cx - 0.42 * w, y + 0.38 * h);
    set(8, cx + 0.42 * w, y + 0.38 * h);
    set(9, cx - 0.44 * w, y + 0.55 * h);
    set(10, cx + 0.44 * w, y + 0.55 * h);
  }
  set(11, cx - 0.2 * w, y + 0.55 * h);
  set(12, cx + 0.2 * w, y + 0.55 * h);
  set(13, cx - 0.22 * w, y + 0.76 * h);
  set(14, cx + 0.22 * w, y + 0.76 * h);
  set(15, cx - 0.22 * w, y + 0.97 * h);
  set(16, cx + 0.22 * w, y + 0.97 * h);
  return p;
}

inline void fill_rect(VideoFrames& v, std::size_t f, const Box& b, const std::array<std::uint8_t, 3>& c) {
  for (std::size_t y = 0; y < v.height; ++y) {
    const double cy = static_cast<double>(y) + 0.5;
    if (cy < b.y1 || cy >= b.y2) continue;
    for (std::size_t x = 0; x < v.width; ++x) {
      const double cx = static_cast<double>(x) + 0.5;
      if (cx < b.x1 || cx >= b.x2) continue;
      for (std::size_t k = 0; k < 3; ++k) v.at(f, y, x, k) = c[k];
    }
  }
}

inline double center_distance(const Box& a, const Box& b) { return std::hypot(a.cx() - b.cx(), a.cy() - b.cy()); }

/// Relations implied by the boxes over the whole clip, by kinematic definition.
inline std::vector<std::string> kinematic_predicates(const std::vector<Box>& person,
                                                     const std::vector<Box>& object, double width,
                                                     double tau) {
  std::vector<double> d;
  for (std::size_t t = 0; t < person.size(); ++t) d.push_back(center_distance(person[t], object[t]));
  bool dec = d.size() > 1, inc = d.size() > 1, near = true, inside = true;
  for (std::size_t t = 0; t < d.size(); ++t) {
    if (t > 0) {
      dec = dec && d[t] < d[t - 1];
      inc = inc && d[t] > d[t - 1];
    }
    near = near && d[t] < tau * width;
    const Box& p = person[t];
    const double ox = object[t].cx(), oy = object[t].cy();
    inside = inside && ox >= p.x1 && ox <= p.x2 && oy >= p.y1 && oy <= p.y2;
  }
  std::vector<std::string> out;
  if (dec) out.push_back("towards");
  if (inc) out.push_back("away");
  if (near) out.push_back("next_to");
  if (inside) out.push_back("hold");
  return out;
}

struct ObjectTrack {
  std::string category;
  std::vector<Box> boxes;
};

struct BaseClip {
  std::vector<Box> person;  // per frame
  bool arms_raised = false;
  std::vector<ObjectTrack> objects;
};

inline Box translated(const Box& b, double dx, double dy) { return Box{b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy}; }

inline bool inside_frame(const Box& b, double W, double H) {
  return b.x1 >= 0 && b.y1 >= 0 && b.x2 <= W && b.y2 <= H;
}

/// One clip: a drifting person and objects placed relative to the person, so
/// the kinematic relations hold by construction in the person's frame.
inline BaseClip sample_clip(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const double W = spec.width, H = spec.height;
  const int F = spec.frame_count();
  std::uniform_real_distribution<double> U(0.0, 1.0);
  BaseClip clip;
  const double pw = 0.22 * W, ph = 0.3 * H;
  for (int attempt = 0;; ++attempt) {
    const double speed = (spec.person_speed_min + U(rng) * (spec.person_speed_max - spec.person_speed_min)) * W;
    // Near-vertical drift, across the horizontal approach axis.
    const double ang = (U(rng) < 0.5 ? 0.5 : 1.5) * std::numbers::pi + 0.3 * (2.0 * U(rng) - 1.0);
    const double vx = speed * std::cos(ang), vy = speed * std::sin(ang);
    // One-sided approach comes from the right, so leave room there.
    const double px = spec.two_sided ? 0.05 * W + U(rng) * (0.9 * W - pw) : 0.02 * W + U(rng) * 0.3 * W;
    const double py = 0.05 * H + U(rng) * (0.9 * H - ph);
    const Box b0{px, py, px + pw, py + ph};
    const Box b1 = translated(b0, vx * (F - 1), vy * (F - 1));
    if (!inside_frame(b0, W, H) || !inside_frame(b1, W, H)) {
      if (attempt > 10000) throw InputError("synthetic spec: person path cannot fit in the frame");
      continue;
    }
    clip.person.clear();
    for (int f = 0; f < F; ++f) clip.person.push_back(translated(b0, vx * f, vy * f));
    break;
  }
  clip.arms_raised = U(rng) < 0.5;

  std::uniform_int_distribution<int> n_obj(1, spec.max_objects);
  const int n = n_obj(rng);
  std::uniform_int_distribution<std::size_t> cat(0, spec.object_categories.size() - 1);
  const double os = 0.14 * W;
  // Object box at offset (rx, ry) from the person centre at frame f.
  auto rel_box = [&](int f, double rx, double ry) {
    const double cx = clip.person[static_cast<std::size_t>(f)].cx() + rx;
    const double cy = clip.person[static_cast<std::size_t>(f)].cy() + ry;
    return Box{cx - os / 2, cy - os / 2, cx + os / 2, cy + os / 2};
  };
  auto path_fits = [&](const std::vector<Box>& boxes) {
    return std::all_of(boxes.begin(), boxes.end(), [&](const Box& b) { return inside_frame(b, W, H); });
  };

  for (int k = 0; k < n; ++k) {
    ObjectTrack ob;
    ob.category = spec.object_categories[cat(rng)];
    const double mode = U(rng);
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      ob.boxes.clear();
      if (mode < 0.5) {
        // Approaches along a straight line (relative to the person), stopping short of contact.
        const double speed = (spec.speed_min + U(rng) * (spec.speed_max - spec.speed_min)) * W;
        const double travel = speed * (F - 1);
        const double gap = (0.14 + 0.08 * U(rng)) * W;
        const double ang = (spec.two_sided && U(rng) < 0.5 ? std::numbers::pi : 0.0) +
                           spec.approach_spread * (2.0 * U(rng) - 1.0);
        const double ux = std::cos(ang), uy = std::sin(ang);
        for (int f = 0; f < F; ++f) {
          const double r = gap + travel * (1.0 - static_cast<double>(f) / (F - 1));
          ob.boxes.push_back(rel_box(f, ux * r, uy * r));
        }
      } else if (mode < 0.75) {
        // Keeps a fixed offset beside the person.
        const double r = (0.16 + 0.08 * U(rng)) * W;
        const double ang = 2.0 * std::numbers::pi * U(rng);
        for (int f = 0; f < F; ++f) ob.boxes.push_back(rel_box(f, r * std::cos(ang), r * std::sin(ang)));
      } else {
        // Held: centre inside the person box for the whole clip.
        const double rx = (0.5 * U(rng) - 0.25) * pw, ry = (0.4 * U(rng) - 0.2) * ph;
        for (int f = 0; f < F; ++f) ob.boxes.push_back(rel_box(f, rx, ry));
      }
      placed = path_fits(ob.boxes);
    }
    if (placed) clip.objects.push_back(std::move(ob));
  }
  return clip;
}

/// Arm segments (shoulder-elbow, elbow-wrist) drawn onto the frame.
inline void draw_arms(VideoFrames& v, std::size_t f, const Pose& p) {
  Tensor mask(Shape{1, v.height, v.width});
  auto px = [&](std::size_t j, std::size_t axis, std::size_t n) {
    return std::clamp(static_cast<long>(std::floor(p.keypoints[j][axis])), 0L, static_cast<long>(n) - 1);
  };
  for (auto [a, b] : {std::pair<std::size_t, std::size_t>{5, 7}, {7, 9}, {6, 8}, {8, 10}}) {
    draw_line(mask, 0, px(a, 0, v.width), px(a, 1, v.height), px(b, 0, v.width), px(b, 1, v.height), 1.0);
  }
  // Two pixels wide: each line pixel also paints its right neighbour.
  for (std::size_t y = 0; y < v.height; ++y) {
    for (std::size_t x = 0; x < v.width; ++x) {
      const bool on = mask.at(0, y, x) != 0.0 || (x > 0 && mask.at(0, y, x - 1) != 0.0);
      if (!on) continue;
      for (std::size_t k = 0; k < 3; ++k) v.at(f, y, x, k) = kArmColor[k];
    }
  }
}

/// Emits one video; `reversed` plays the clip backwards.
inline VideoAnnotation emit_video(const SyntheticSpec& spec, const BaseClip& clip, const std::string& id,
                                  bool reversed, const Taxonomy& tax, VideoFrames& frames) {
  const int F = spec.frame_count();
  auto src = [&](int f) { return static_cast<std::size_t>(reversed ? F - 1 - f : f); };
  VideoAnnotation v;
  v.video_id = id;
  v.fps = spec.fps;
  v.width = spec.width;
  v.height = spec.height;
  v.frame_count = F;
  v.instances.push_back({"person0", kPersonName});
  for (std::size_t k = 0; k < clip.objects.size(); ++k) {
    v.instances.push_back({"object" + std::to_string(k), clip.objects[k].category});
  }
  frames = VideoFrames::blank(static_cast<std::uint32_t>(spec.width), static_cast<std::uint32_t>(spec.height),
                              static_cast<std::uint32_t>(F));
  std::vector<Box> person_series;
  for (int f = 0; f < F; ++f) {
    const auto fi = static_cast<std::size_t>(f);
    const Box& pb = clip.person[src(f)];
    person_series.push_back(pb);
    const Pose pose = make_pose(pb, clip.arms_raised);
    fill_rect(frames, fi, Box{0, 0, double(spec.width), double(spec.height)}, kBackground);
    v.boxes[{f, "person0"}] = pb;
    v.poses[{f, "person0"}] = pose;
    fill_rect(frames, fi, pb, kPersonColor);
    for (std::size_t k = 0; k < clip.objects.size(); ++k) {
      const Box& b = clip.objects[k].boxes[src(f)];
      v.boxes[{f, "object" + std::to_string(k)}] = b;
      const int c = tax.category_index(clip.objects[k].category);
      fill_rect(frames, fi, b, kCategoryColors[static_cast<std::size_t>(c - 1) % kCategoryColors.size()]);
    }
    if (spec.render_arms) draw_arms(frames, fi, pose);
  }
  for (std::size_t k = 0; k < clip.objects.size(); ++k) {
    std::vector<Box> series;
    for (int f = 0; f < F; ++f) series.push_back(clip.objects[k].boxes[src(f)]);
    auto preds = kinematic_predicates(person_series, series, spec.width, spec.next_to_tau);
    const bool holds = std::find(preds.begin(), preds.end(), "hold") != preds.end();
    if (spec.distractors && holds && clip.arms_raised) preds.push_back("lift");
    for (const auto& p : preds) {
      if (tax.predicate_index(p) < 0) continue;
      v.relations.push_back({"person0", "object" + std::to_string(k), p, 0, F});
    }
  }
  return v;
}

}  // namespace synth

inline Taxonomy synthetic_taxonomy(const SyntheticSpec& spec) {
  Taxonomy t;
  for (const auto& p : spec.predicate_kit) {
    t.predicates.push_back({p, p == "towards" || p == "away"});
  }
  if (spec.distractors) t.predicates.push_back({"lift", false});
  for (const auto& c : spec.object_categories) t.object_categories.push_back(c);
  for (std::size_t p = 0; p < t.predicates.size(); ++p) {
    for (std::size_t c = 1; c < t.object_categories.size(); ++c) {
      t.ensure_triplet(static_cast<int>(p), static_cast<int>(c));
    }
  }
  return t;
}

/// Deterministic dataset; videos come in (clip, time-reversed clip) twin pairs
/// with the pair order drawn at random, so ids carry no label information.
inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset ds;
  ds.taxonomy = synthetic_taxonomy(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto make_split = [&](const std::string& prefix, int count, AnnotationSet& out) {
    for (int i = 0; i < count; i += 2) {
      const auto clip = synth::sample_clip(spec, rng);
      const bool reversed_first = U(rng) < 0.5;
      const int pair_size = std::min(2, count - i);
      for (int k = 0; k < pair_size; ++k) {
        char id[32];
        std::snprintf(id, sizeof(id), "%s%04d", prefix.c_str(), i + k);
        const bool reversed = (k == 0) == reversed_first;
        VideoFrames frames;
        out.videos.push_back(synth::emit_video(spec, clip, id, reversed, ds.taxonomy, frames));
        ds.frames.emplace(id, std::move(frames));
      }
      if (pair_size == 2) {
        const std::string a = out.videos[out.videos.size() - 2].video_id;
        const std::string b = out.videos.back().video_id;
        ds.twins.emplace_back(reversed_first ? b : a, reversed_first ? a : b);
      }
    }
  };
  make_split("train", spec.num_train_videos, ds.train);
  make_split("val", spec.num_val_videos, ds.val);
  count_triplets(ds.train, sample_keyframes(ds.train, KeyframeFilter::kActiveRelation), ds.taxonomy);
  return ds;
}

/// In-memory split over the generated frames.
inline Split synthetic_split(const SyntheticDataset& ds, const AnnotationSet& ann, KeyframeFilter filter) {
  Split s{ann, {}, sample_keyframes(ann, filter)};
  for (const auto& v : ann.videos) s.frames.emplace(v.video_id, ds.frames.at(v.video_id));
  return s;
}

inline void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds) {
  namespace fs = std::filesystem;
  const DatasetLayout layout{dir};
  fs::create_directories(layout.frames_dir());
  write_text_file(layout.taxonomy().string(), taxonomy_json(ds.taxonomy).dump(1) + "\n");
  save_annotations(layout.annotations("train").string(), ds.train);
  save_annotations(layout.annotations("val").string(), ds.val);
  for (const auto& [id, f] : ds.frames) vhfr::save(layout.frames(id).string(), f);
}

}  // namespace sthoi
