#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "sthoi/annotation.hpp"
#include "sthoi/sample.hpp"

namespace sthoi {

/// Which keyframes survive filtering.
enum class KeyframeFilter {
  kActiveRelation,  // a valid pair exists and some relation interval covers the keyframe
  kValidPair,       // a person box and another instance box co-exist
};

struct KeyframeRef {
  std::string video_id;
  int frame = 0;

  friend bool operator==(const KeyframeRef&, const KeyframeRef&) = default;
  friend auto operator<=>(const KeyframeRef&, const KeyframeRef&) = default;
};

/// Instances with a box at `frame`, in declaration order.
inline std::vector<const Instance*> instances_at(const VideoAnnotation& v, int frame) {
  std::vector<const Instance*> out;
  for (const auto& i : v.instances) {
    if (v.boxes.count({frame, i.instance_id})) out.push_back(&i);
  }
  return out;
}

inline bool has_valid_pair(const VideoAnnotation& v, int frame) {
  const auto present = instances_at(v, frame);
  const bool person = std::any_of(present.begin(), present.end(),
                                  [](const Instance* i) { return i->category == kPersonName; });
  return person && present.size() >= 2;
}

/// Candidate keyframes at frame round(k * fps), k = 0, 1, ...
inline std::vector<int> candidate_keyframes(const VideoAnnotation& v) {
  std::vector<int> out;
  for (long k = 0;; ++k) {
    const long f = std::lround(static_cast<double>(k) * v.fps);
    if (f >= v.frame_count) break;
    if (out.empty() || f > out.back()) out.push_back(static_cast<int>(f));
  }
  return out;
}

/// Samples keyframes at 1 Hz and drops those failing `filter`.
inline std::vector<KeyframeRef> sample_keyframes(const AnnotationSet& ann,
                                                 KeyframeFilter filter = KeyframeFilter::kActiveRelation) {
  std::vector<KeyframeRef> out;
  for (const auto& v : ann.videos) {
    if (!(v.fps > 0.0)) throw InputError("video " + v.video_id + ": fps must be positive");
    for (int f : candidate_keyframes(v)) {
      if (!has_valid_pair(v, f)) continue;
      if (filter == KeyframeFilter::kActiveRelation &&
          std::none_of(v.relations.begin(), v.relations.end(),
                       [f](const Relation& r) { return r.covers(f); })) {
        continue;
      }
      out.push_back({v.video_id, f});
    }
  }
  return out;
}

/// Keyframe labels over the M x (N-1) pairs of instances present at the keyframe.
struct KeyframeLabels {
  std::vector<const Instance*> instances;
  std::vector<PairProposal> pairs;
  Tensor gt;  // [pairs x C]; empty when there is no pair
};

inline std::string describe(const Relation& r, std::size_t index) {
  return detail::concat("relation ", index, " (", r.subject_id, " -", r.predicate, "-> ", r.object_id,
                        ", frames [", r.begin_frame, ",", r.end_frame, "))");
}

/// gt[pair, c] = 1 iff a relation (subject, object, c) interval contains `frame`.
inline KeyframeLabels convert_labels(const VideoAnnotation& v, int frame, const Taxonomy& tax) {
  for (std::size_t i = 0; i < v.relations.size(); ++i) {
    const auto& r = v.relations[i];
    for (const auto* id : {&r.subject_id, &r.object_id}) {
      if (!v.find_instance(*id)) {
        throw InputError("video " + v.video_id + ": " + describe(r, i) + " references missing instance " +
                         *id);
      }
    }
    if (tax.predicate_index(r.predicate) < 0) {
      throw InputError("video " + v.video_id + ": " + describe(r, i) + " uses unknown predicate");
    }
  }
  KeyframeLabels out;
  out.instances = instances_at(v, frame);
  std::vector<Trajectory> stubs;
  for (const auto* i : out.instances) {
    Trajectory t;
    t.instance_id = i->instance_id;
    t.category_id = i->category == kPersonName ? kPersonCategory : 1;
    stubs.push_back(std::move(t));
  }
  out.pairs = enumerate_pairs(stubs);
  if (out.pairs.empty()) return out;
  const std::size_t C = tax.num_predicates();
  if (C == 0) throw InputError("taxonomy has no predicates");
  out.gt = Tensor(Shape{out.pairs.size(), C});
  for (std::size_t p = 0; p < out.pairs.size(); ++p) {
    const auto& sid = out.instances[out.pairs[p].human_index]->instance_id;
    const auto& oid = out.instances[out.pairs[p].object_index]->instance_id;
    for (const auto& r : v.relations) {
      if (r.subject_id == sid && r.object_id == oid && r.covers(frame)) {
        out.gt.at(p, static_cast<std::size_t>(tax.predicate_index(r.predicate))) = 1.0;
      }
    }
  }
  return out;
}

inline int category_id(const Taxonomy& tax, const std::string& name) {
  const int c = tax.category_index(name);
  if (c < 0) throw InputError("unknown object category " + name);
  return c;
}

/// Counts positive keyframe labels per (predicate, object category) triplet,
/// adding missing triplets to the taxonomy and overwriting its counts.
inline void count_triplets(const AnnotationSet& ann, const std::vector<KeyframeRef>& keyframes,
                           Taxonomy& tax) {
  for (auto& t : tax.triplets) t.count = 0;
  for (const auto& kf : keyframes) {
    const auto* v = ann.find(kf.video_id);
    if (!v) throw InputError("keyframe references unknown video " + kf.video_id);
    const auto labels = convert_labels(*v, kf.frame, tax);
    for (std::size_t p = 0; p < labels.pairs.size(); ++p) {
      const int obj = category_id(tax, labels.instances[labels.pairs[p].object_index]->category);
      for (std::size_t c = 0; c < tax.num_predicates(); ++c) {
        if (labels.gt.at(p, c) == 1.0) {
          const int id = tax.ensure_triplet(static_cast<int>(c), obj);
          ++tax.triplets[static_cast<std::size_t>(id)].count;
        }
      }
    }
  }
}

inline constexpr long kRareThreshold = 25;

struct RaritySplit {
  std::set<int> rare;
  std::set<int> nonrare;

  bool is_rare(int triplet) const { return !nonrare.count(triplet); }
};

/// Rare: fewer than 25 training instances. Non-rare: the rest.
inline RaritySplit rarity_split(const Taxonomy& tax) {
  RaritySplit s;
  for (const auto& t : tax.triplets) {
    (t.count < kRareThreshold ? s.rare : s.nonrare).insert(t.id);
  }
  return s;
}

}  // namespace sthoi
