#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sthoi/features.hpp"
#include "sthoi/geometry.hpp"

namespace sthoi {

using json = nlohmann::json;

struct Instance {
  std::string instance_id;
  std::string category;
};

/// Clip-level relation; frames in [begin_frame, end_frame).
struct Relation {
  std::string subject_id;
  std::string object_id;
  std::string predicate;
  int begin_frame = 0;
  int end_frame = 0;

  bool covers(int frame) const { return frame >= begin_frame && frame < end_frame; }
};

using FrameKey = std::pair<int, std::string>;  // (frame, instance_id)

struct VideoAnnotation {
  std::string video_id;
  double fps = 1.0;
  int width = 0;
  int height = 0;
  int frame_count = 0;
  std::vector<Instance> instances;
  std::map<FrameKey, Box> boxes;
  std::map<FrameKey, Pose> poses;
  std::vector<Relation> relations;

  const Instance* find_instance(const std::string& id) const {
    for (const auto& i : instances) {
      if (i.instance_id == id) return &i;
    }
    return nullptr;
  }

  std::optional<Box> box_at(int frame, const std::string& id) const {
    auto it = boxes.find({frame, id});
    if (it == boxes.end()) return std::nullopt;
    return it->second;
  }
};

struct AnnotationSet {
  std::vector<VideoAnnotation> videos;

  const VideoAnnotation* find(const std::string& video_id) const {
    for (const auto& v : videos) {
      if (v.video_id == video_id) return &v;
    }
    return nullptr;
  }
};

inline const std::string kPersonName = "person";

struct PredicateInfo {
  std::string name;
  bool temporal = false;
};

struct Triplet {
  int id = 0;
  int predicate = 0;
  int object_category = 0;
  long count = 0;
};

/// Predicates, object categories (index 0 is "person") and the (person, predicate,
/// object) triplet table.
struct Taxonomy {
  std::vector<PredicateInfo> predicates;
  std::vector<std::string> object_categories{kPersonName};
  std::vector<Triplet> triplets;
  bool unofficial_temporal_flags = true;

  std::size_t num_predicates() const { return predicates.size(); }

  int predicate_index(const std::string& name) const {
    for (std::size_t i = 0; i < predicates.size(); ++i) {
      if (predicates[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  int category_index(const std::string& name) const {
    for (std::size_t i = 0; i < object_categories.size(); ++i) {
      if (object_categories[i] == name) return static_cast<int>(i);
    }
    return -1;
  }

  /// Dense triplet id of (predicate, object category), or -1.
  int triplet_id(int predicate, int object_category) const {
    for (const auto& t : triplets) {
      if (t.predicate == predicate && t.object_category == object_category) return t.id;
    }
    return -1;
  }

  /// Adds the triplet when absent; returns its id.
  int ensure_triplet(int predicate, int object_category) {
    const int id = triplet_id(predicate, object_category);
    if (id >= 0) return id;
    triplets.push_back({static_cast<int>(triplets.size()), predicate, object_category, 0});
    return triplets.back().id;
  }

  std::string triplet_name(int id) const {
    const auto& t = triplets.at(static_cast<std::size_t>(id));
    return kPersonName + "-" + predicates.at(static_cast<std::size_t>(t.predicate)).name + "-" +
           object_categories.at(static_cast<std::size_t>(t.object_category));
  }

  void validate() const {
    if (object_categories.empty() || object_categories.front() != kPersonName) {
      throw InputError("taxonomy: object_categories[0] must be \"person\"");
    }
    std::set<std::string> names;
    for (const auto& p : predicates) {
      if (!names.insert(p.name).second) throw InputError("taxonomy: duplicate predicate " + p.name);
    }
    for (std::size_t i = 0; i < triplets.size(); ++i) {
      const auto& t = triplets[i];
      if (t.id != static_cast<int>(i)) throw InputError("taxonomy: triplet ids must be dense");
      if (t.predicate < 0 || t.predicate >= static_cast<int>(predicates.size()) ||
          t.object_category < 0 || t.object_category >= static_cast<int>(object_categories.size())) {
        throw InputError(detail::concat("taxonomy: triplet ", i, " references unknown entries"));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace schema {

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw InputError(path + ": " + what);
}

inline const json& field(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) fail(path + "." + key, "missing field");
  return *it;
}

inline std::string get_string(const json& j, const std::string& key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_string()) fail(path + "." + key, "expected a string");
  return v.get<std::string>();
}

inline int get_int(const json& j, const std::string& key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
  return v.get<int>();
}

inline double get_number(const json& j, const std::string& key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  return v.get<double>();
}

inline const json& get_array(const json& j, const std::string& key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_array()) fail(path + "." + key, "expected an array");
  return v;
}

inline Box parse_box(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 4) fail(path, "expected [x1, y1, x2, y2]");
  for (const auto& v : j) {
    if (!v.is_number()) fail(path, "box coordinates must be numbers");
  }
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.is_valid()) fail(path, "box must satisfy x1 <= x2, y1 <= y2 with finite coordinates");
  return b;
}

inline json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Pose parse_pose(const json& j, const std::string& path) {
  Pose p;
  const auto& kps = get_array(j, "keypoints", path);
  const auto& valid = get_array(j, "valid", path);
  if (kps.size() != kNumJoints || valid.size() != kNumJoints) {
    fail(path, "pose needs exactly 17 keypoints and 17 validity flags");
  }
  for (std::size_t k = 0; k < kNumJoints; ++k) {
    const auto& kp = kps[k];
    if (!kp.is_array() || kp.size() != 2 || !kp[0].is_number() || !kp[1].is_number()) {
      fail(path + ".keypoints[" + std::to_string(k) + "]", "expected [x, y]");
    }
    if (!valid[k].is_boolean()) fail(path + ".valid[" + std::to_string(k) + "]", "expected a boolean");
    p.keypoints[k] = {kp[0].get<double>(), kp[1].get<double>()};
    p.valid[k] = valid[k].get<bool>();
  }
  return p;
}

inline json pose_json(const Pose& p) {
  json kps = json::array(), valid = json::array();
  for (std::size_t k = 0; k < kNumJoints; ++k) {
    kps.push_back(json::array({p.keypoints[k][0], p.keypoints[k][1]}));
    valid.push_back(static_cast<bool>(p.valid[k]));
  }
  return json{{"keypoints", kps}, {"valid", valid}};
}

}  // namespace schema

/// Parses one video. Relations are optional so the same schema carries
/// externally detected trajectories.
inline VideoAnnotation parse_video(const json& j, const std::string& path) {
  using namespace schema;
  VideoAnnotation v;
  v.video_id = get_string(j, "video_id", path);
  v.fps = get_number(j, "fps", path);
  if (!(v.fps > 0.0)) fail(path + ".fps", "must be positive");
  v.width = get_int(j, "width", path);
  v.height = get_int(j, "height", path);
  v.frame_count = get_int(j, "frame_count", path);
  if (v.width <= 0 || v.height <= 0) fail(path, "width and height must be positive");
  if (v.frame_count < 0) fail(path + ".frame_count", "must be non-negative");

  const auto& insts = get_array(j, "instances", path);
  for (std::size_t i = 0; i < insts.size(); ++i) {
    const std::string p = path + ".instances[" + std::to_string(i) + "]";
    Instance inst{get_string(insts[i], "instance_id", p), get_string(insts[i], "category", p)};
    if (v.find_instance(inst.instance_id)) fail(p + ".instance_id", "duplicate id " + inst.instance_id);
    v.instances.push_back(std::move(inst));
  }

  const auto& boxes = get_array(j, "boxes", path);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::string p = path + ".boxes[" + std::to_string(i) + "]";
    const int frame = get_int(boxes[i], "frame", p);
    const std::string id = get_string(boxes[i], "instance_id", p);
    if (!v.find_instance(id)) fail(p + ".instance_id", "undeclared instance " + id);
    if (frame < 0 || frame >= v.frame_count) fail(p + ".frame", "outside [0, frame_count)");
    v.boxes[{frame, id}] = parse_box(field(boxes[i], "box", p), p + ".box");
  }

  if (j.contains("poses")) {
    const auto& poses = get_array(j, "poses", path);
    for (std::size_t i = 0; i < poses.size(); ++i) {
      const std::string p = path + ".poses[" + std::to_string(i) + "]";
      const int frame = get_int(poses[i], "frame", p);
      const std::string id = get_string(poses[i], "instance_id", p);
      const auto* inst = v.find_instance(id);
      if (!inst) fail(p + ".instance_id", "undeclared instance " + id);
      if (inst->category != kPersonName) fail(p + ".instance_id", "poses belong to person instances");
      v.poses[{frame, id}] = parse_pose(poses[i], p);
    }
  }

  if (j.contains("relations")) {
    const auto& rels = get_array(j, "relations", path);
    for (std::size_t i = 0; i < rels.size(); ++i) {
      const std::string p = path + ".relations[" + std::to_string(i) + "]";
      Relation r{get_string(rels[i], "subject_id", p), get_string(rels[i], "object_id", p),
                 get_string(rels[i], "predicate_id", p), get_int(rels[i], "begin_frame", p),
                 get_int(rels[i], "end_frame", p)};
      if (r.begin_frame >= r.end_frame) fail(p, "begin_frame must be < end_frame");
      // Unknown instance ids are reported when labels are converted.
      if (const auto* s = v.find_instance(r.subject_id); s && s->category != kPersonName) {
        fail(p + ".subject_id", "relation subject must be a person");
      }
      v.relations.push_back(std::move(r));
    }
  }
  return v;
}

inline json video_json(const VideoAnnotation& v, bool with_relations = true) {
  json j;
  j["video_id"] = v.video_id;
  j["fps"] = v.fps;
  j["width"] = v.width;
  j["height"] = v.height;
  j["frame_count"] = v.frame_count;
  j["instances"] = json::array();
  for (const auto& i : v.instances) {
    j["instances"].push_back({{"instance_id", i.instance_id}, {"category", i.category}});
  }
  j["boxes"] = json::array();
  for (const auto& [k, b] : v.boxes) {
    j["boxes"].push_back({{"frame", k.first}, {"instance_id", k.second}, {"box", schema::box_json(b)}});
  }
  j["poses"] = json::array();
  for (const auto& [k, p] : v.poses) {
    json pj = schema::pose_json(p);
    pj["frame"] = k.first;
    pj["instance_id"] = k.second;
    j["poses"].push_back(std::move(pj));
  }
  if (with_relations) {
    j["relations"] = json::array();
    for (const auto& r : v.relations) {
      j["relations"].push_back({{"subject_id", r.subject_id},
                                {"object_id", r.object_id},
                                {"predicate_id", r.predicate},
                                {"begin_frame", r.begin_frame},
                                {"end_frame", r.end_frame}});
    }
  }
  return j;
}

inline AnnotationSet parse_annotations(const json& j) {
  AnnotationSet set;
  const auto& vids = schema::get_array(j, "videos", "$");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < vids.size(); ++i) {
    const std::string p = "$.videos[" + std::to_string(i) + "]";
    set.videos.push_back(parse_video(vids[i], p));
    if (!ids.insert(set.videos.back().video_id).second) schema::fail(p + ".video_id", "duplicate video id");
  }
  return set;
}

inline json annotations_json(const AnnotationSet& set, bool with_relations = true) {
  json vids = json::array();
  for (const auto& v : set.videos) vids.push_back(video_json(v, with_relations));
  return json{{"videos", vids}};
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw InputError(path + ": invalid JSON: " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open for writing: " + path);
  f << text;
  if (!f) throw InputError("write failed: " + path);
}

inline AnnotationSet load_annotations(const std::string& path) {
  return parse_annotations(read_json_file(path));
}

inline void save_annotations(const std::string& path, const AnnotationSet& set) {
  write_text_file(path, annotations_json(set).dump(1) + "\n");
}

inline Taxonomy parse_taxonomy(const json& j) {
  using namespace schema;
  Taxonomy t;
  const auto& preds = get_array(j, "predicates", "$");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::string p = "$.predicates[" + std::to_string(i) + "]";
    const auto& tf = field(preds[i], "temporal", p);
    if (!tf.is_boolean()) fail(p + ".temporal", "expected a boolean");
    t.predicates.push_back({get_string(preds[i], "name", p), tf.get<bool>()});
  }
  t.object_categories.clear();
  for (const auto& c : get_array(j, "object_categories", "$")) {
    if (!c.is_string()) fail("$.object_categories", "expected strings");
    t.object_categories.push_back(c.get<std::string>());
  }
  if (j.contains("triplets")) {
    const auto& trips = get_array(j, "triplets", "$");
    for (std::size_t i = 0; i < trips.size(); ++i) {
      const std::string p = "$.triplets[" + std::to_string(i) + "]";
      const int pred = t.predicate_index(get_string(trips[i], "predicate", p));
      const int obj = t.category_index(get_string(trips[i], "object", p));
      if (pred < 0 || obj < 0) fail(p, "unknown predicate or object category");
      long count = trips[i].contains("count") ? trips[i]["count"].get<long>() : 0;
      t.triplets.push_back({get_int(trips[i], "id", p), pred, obj, count});
    }
  }
  if (j.contains("unofficial_temporal_flags")) {
    t.unofficial_temporal_flags = j["unofficial_temporal_flags"].get<bool>();
  }
  t.validate();
  return t;
}

inline json taxonomy_json(const Taxonomy& t) {
  json preds = json::array();
  for (const auto& p : t.predicates) preds.push_back({{"name", p.name}, {"temporal", p.temporal}});
  json trips = json::array();
  for (const auto& tr : t.triplets) {
    trips.push_back({{"id", tr.id},
                     {"subject", kPersonName},
                     {"predicate", t.predicates[static_cast<std::size_t>(tr.predicate)].name},
                     {"object", t.object_categories[static_cast<std::size_t>(tr.object_category)]},
                     {"count", tr.count}});
  }
  return json{{"predicates", preds},
              {"object_categories", t.object_categories},
              {"triplets", trips},
              {"unofficial_temporal_flags", t.unofficial_temporal_flags}};
}

/// Builds a taxonomy from the predicates and categories an annotation set uses,
/// in first-appearance order. Temporal flags default to false.
inline Taxonomy derive_taxonomy(const AnnotationSet& set) {
  Taxonomy t;
  for (const auto& v : set.videos) {
    for (const auto& i : v.instances) {
      if (t.category_index(i.category) < 0) t.object_categories.push_back(i.category);
    }
    for (const auto& r : v.relations) {
      if (t.predicate_index(r.predicate) < 0) t.predicates.push_back({r.predicate, false});
    }
  }
  return t;
}

}  // namespace sthoi
