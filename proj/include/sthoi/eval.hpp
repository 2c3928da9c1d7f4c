#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "sthoi/dataset.hpp"
#include "sthoi/keyframes.hpp"
#include "sthoi/log.hpp"
#include "sthoi/train.hpp"

namespace sthoi {

inline constexpr std::size_t kMaxDetectionsPerKeyframe = 100;
inline constexpr double kMatchIou = 0.5;

struct GtInstance {
  std::string video_id;
  int keyframe_index = 0;
  Box human_box;
  Box object_box;
  int object_category = 0;
  int predicate_id = 0;
  bool matched = false;
};

enum class EvalMode { kOracle, kDetection };

inline std::string to_string(EvalMode m) { return m == EvalMode::kOracle ? "oracle" : "detection"; }

inline EvalMode parse_eval_mode(const std::string& s) {
  if (s == "oracle") return EvalMode::kOracle;
  if (s == "detection") return EvalMode::kDetection;
  throw InputError("unknown evaluation mode '" + s + "' (expected oracle or detection)");
}

/// Canonical order: score desc, video, keyframe, human box, object box, predicate, category.
inline bool canonical_less(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  auto key = [](const Detection& d) {
    return std::tie(d.video_id, d.keyframe_index, d.human_box.x1, d.human_box.y1, d.human_box.x2,
                    d.human_box.y2, d.object_box.x1, d.object_box.y1, d.object_box.x2, d.object_box.y2,
                    d.predicate_id, d.object_category);
  };
  return key(a) < key(b);
}

inline void canonical_sort(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), canonical_less);
}

/// Greedy matching of score-ordered detections against one category's GT.
/// Each detection takes the unmatched same-keyframe GT with the largest
/// min(iou_h, iou_o); it is a TP when that value exceeds 0.5.
inline std::vector<bool> match_category(const std::vector<Detection>& dets, std::vector<GtInstance>& gts) {
  std::vector<bool> tp;
  tp.reserve(dets.size());
  for (const auto& d : dets) {
    double best = -1.0;
    GtInstance* arg = nullptr;
    for (auto& g : gts) {
      if (g.matched || g.video_id != d.video_id || g.keyframe_index != d.keyframe_index) continue;
      const double v = std::min(iou(d.human_box, g.human_box), iou(d.object_box, g.object_box));
      if (v > best) {
        best = v;
        arg = &g;
      }
    }
    const bool hit = arg && best > kMatchIou;
    if (hit) arg->matched = true;
    tp.push_back(hit);
  }
  return tp;
}

/// All-point interpolated AP; nullopt (undefined) when n_gt is zero.
inline std::optional<double> average_precision(const std::vector<bool>& tp, std::size_t n_gt) {
  const auto n_tp = static_cast<std::size_t>(std::count(tp.begin(), tp.end(), true));
  if (n_tp > n_gt) {
    throw InputError(detail::concat("average_precision: ", n_tp, " true positives exceed ", n_gt, " GT"));
  }
  if (n_gt == 0) return std::nullopt;
  const std::size_t n = tp.size();
  std::vector<double> prec(n);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    hits += tp[i] ? 1 : 0;
    prec[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp[i]) ap += prec[i];
  }
  return ap / static_cast<double>(n_gt);
}

struct TripletAp {
  int triplet = 0;
  std::string name;
  int predicate = 0;
  int object_category = 0;
  std::size_t n_gt = 0;
  std::size_t n_det = 0;
  long train_count = 0;
  bool rare = false;
  std::optional<double> ap;
};

struct PredicateAp {
  int predicate = 0;
  std::string name;
  bool temporal = false;
  std::size_t n_gt = 0;
  std::optional<double> ap;
};

struct EvalReport {
  EvalMode mode = EvalMode::kOracle;
  std::optional<double> map_full, map_rare, map_nonrare, map_temporal, map_spatial;
  std::vector<TripletAp> triplets;    // every triplet with GT in the split
  std::vector<PredicateAp> predicates;  // every predicate of the taxonomy
  std::size_t num_keyframes = 0;
  std::size_t num_detections = 0;
  std::size_t truncated_keyframes = 0;
  std::vector<std::string> videos_without_trajectories;
  bool unofficial_temporal_flags = true;

  const TripletAp* find_triplet(const std::string& name) const {
    for (const auto& t : triplets) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  const PredicateAp* find_predicate(const std::string& name) const {
    for (const auto& p : predicates) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
};

inline std::optional<double> mean_defined(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : v) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

/// Keyframe-level GT instances: one per (pair, active predicate).
inline std::vector<GtInstance> ground_truth(const AnnotationSet& ann, const std::vector<KeyframeRef>& keyframes,
                                            const Taxonomy& tax) {
  std::vector<GtInstance> out;
  for (const auto& kf : keyframes) {
    const auto* v = ann.find(kf.video_id);
    if (!v) throw InputError("keyframe references unknown video " + kf.video_id);
    const auto labels = convert_labels(*v, kf.frame, tax);
    for (std::size_t p = 0; p < labels.pairs.size(); ++p) {
      const auto* h = labels.instances[labels.pairs[p].human_index];
      const auto* o = labels.instances[labels.pairs[p].object_index];
      for (std::size_t c = 0; c < tax.num_predicates(); ++c) {
        if (labels.gt.at(p, c) != 1.0) continue;
        GtInstance g;
        g.video_id = kf.video_id;
        g.keyframe_index = kf.frame;
        g.human_box = *v->box_at(kf.frame, h->instance_id);
        g.object_box = *v->box_at(kf.frame, o->instance_id);
        g.object_category = category_id(tax, o->category);
        g.predicate_id = static_cast<int>(c);
        out.push_back(g);
      }
    }
  }
  return out;
}

/// Detections that reproduce the GT exactly, score 1.
inline std::vector<Detection> gt_echo(const std::vector<GtInstance>& gts) {
  std::vector<Detection> out;
  for (const auto& g : gts) {
    out.push_back({g.video_id, g.keyframe_index, g.human_box, g.object_box, g.object_category, g.predicate_id, 1.0});
  }
  return out;
}

inline void validate_detection(const Detection& d) {
  if (!std::isfinite(d.score) || !(d.score > 0.0) || d.score > 1.0) {
    throw InputError(detail::concat("detection ", d.video_id, "@", d.keyframe_index, ": score ", d.score,
                                    " outside (0,1]"));
  }
  if (!d.human_box.is_valid() || !d.object_box.is_valid()) {
    throw InputError(detail::concat("detection ", d.video_id, "@", d.keyframe_index, ": invalid box"));
  }
}

/// Keeps at most `k` detections per keyframe (best first by the canonical key).
inline std::vector<Detection> truncate_per_keyframe(std::vector<Detection> dets, std::size_t k,
                                                    std::size_t* truncated = nullptr) {
  canonical_sort(dets);
  std::map<std::pair<std::string, int>, std::size_t> seen;
  std::set<std::pair<std::string, int>> over;
  std::vector<Detection> out;
  for (auto& d : dets) {
    auto key = std::make_pair(d.video_id, d.keyframe_index);
    if (seen[key]++ < k) {
      out.push_back(std::move(d));
    } else {
      over.insert(key);
    }
  }
  if (truncated) *truncated = over.size();
  return out;
}

/// Full protocol over one split. `keyframes` is the evaluated keyframe set.
inline EvalReport evaluate(std::vector<Detection> dets, const std::vector<GtInstance>& gts,
                           const std::vector<KeyframeRef>& keyframes, const Taxonomy& tax_in,
                           const RaritySplit& rarity, EvalMode mode) {
  Taxonomy tax = tax_in;
  EvalReport rep;
  rep.mode = mode;
  rep.num_keyframes = keyframes.size();
  rep.unofficial_temporal_flags = tax.unofficial_temporal_flags;
  const std::set<KeyframeRef> known(keyframes.begin(), keyframes.end());
  for (const auto& d : dets) {
    if (!known.count({d.video_id, d.keyframe_index})) {
      throw InputError(detail::concat("detection references unknown keyframe ", d.video_id, "@", d.keyframe_index));
    }
    validate_detection(d);
    if (d.predicate_id < 0 || static_cast<std::size_t>(d.predicate_id) >= tax.num_predicates()) {
      throw InputError(detail::concat("detection predicate id ", d.predicate_id, " out of range"));
    }
  }
  for (const auto& g : gts) {
    if (!known.count({g.video_id, g.keyframe_index})) {
      throw InputError(detail::concat("ground truth references unknown keyframe ", g.video_id, "@", g.keyframe_index));
    }
  }
  dets = truncate_per_keyframe(std::move(dets), kMaxDetectionsPerKeyframe, &rep.truncated_keyframes);
  if (rep.truncated_keyframes) {
    log::warn(detail::concat(rep.truncated_keyframes, " keyframe(s) exceeded ", kMaxDetectionsPerKeyframe,
                             " detections and were truncated"));
  }
  rep.num_detections = dets.size();

  // Per triplet: detections and GT sharing predicate and object category.
  std::map<int, std::vector<Detection>> det_by;
  std::map<int, std::vector<GtInstance>> gt_by;
  for (const auto& g : gts) gt_by[tax.ensure_triplet(g.predicate_id, g.object_category)].push_back(g);
  for (const auto& d : dets) {
    const int id = tax.triplet_id(d.predicate_id, d.object_category);
    if (id >= 0 && gt_by.count(id)) det_by[id].push_back(d);
  }
  std::vector<std::optional<double>> all, rare, nonrare, temporal, spatial;
  for (auto& [id, g] : gt_by) {
    const auto& t = tax.triplets[static_cast<std::size_t>(id)];
    TripletAp row;
    row.triplet = id;
    row.name = tax.triplet_name(id);
    row.predicate = t.predicate;
    row.object_category = t.object_category;
    row.n_gt = g.size();
    auto& d = det_by[id];
    row.n_det = d.size();
    const auto* in_table = id < static_cast<int>(tax_in.triplets.size()) ? &tax_in.triplets[static_cast<std::size_t>(id)] : nullptr;
    row.train_count = in_table ? in_table->count : 0;
    row.rare = rarity.is_rare(id);
    row.ap = average_precision(match_category(d, g), g.size());
    all.push_back(row.ap);
    (row.rare ? rare : nonrare).push_back(row.ap);
    (tax.predicates[static_cast<std::size_t>(t.predicate)].temporal ? temporal : spatial).push_back(row.ap);
    rep.triplets.push_back(std::move(row));
  }
  rep.map_full = mean_defined(all);
  rep.map_rare = mean_defined(rare);
  rep.map_nonrare = mean_defined(nonrare);
  rep.map_temporal = mean_defined(temporal);
  rep.map_spatial = mean_defined(spatial);

  // Predicate-wise AP: pooled over object categories, boxes-and-predicate matching.
  for (std::size_t p = 0; p < tax.num_predicates(); ++p) {
    std::vector<Detection> d;
    std::vector<GtInstance> g;
    for (const auto& x : dets) {
      if (x.predicate_id == static_cast<int>(p)) d.push_back(x);
    }
    for (const auto& x : gts) {
      if (x.predicate_id == static_cast<int>(p)) g.push_back(x);
    }
    PredicateAp row;
    row.predicate = static_cast<int>(p);
    row.name = tax.predicates[p].name;
    row.temporal = tax.predicates[p].temporal;
    row.n_gt = g.size();
    row.ap = average_precision(match_category(d, g), g.size());
    rep.predicates.push_back(std::move(row));
  }
  return rep;
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json report_json(const EvalReport& r) {
  json j;
  j["mode"] = to_string(r.mode);
  j["protocol"] = {
      {"matching", "greedy by score; TP iff min(IoU_human, IoU_object) > 0.5 at the same keyframe"},
      {"ap_interpolation", "all-point"},
      {"absent_categories", "triplets without ground truth are excluded from every mAP"},
      {"predicate_ap", "pooled over object categories; matched on boxes and predicate only"},
      {"max_detections_per_keyframe", kMaxDetectionsPerKeyframe},
      {"temporal_flags", r.unofficial_temporal_flags ? "unofficial" : "official"},
      {"rare_threshold", kRareThreshold}};
  j["mAP_full"] = optional_json(r.map_full);
  j["mAP_rare"] = optional_json(r.map_rare);
  j["mAP_nonrare"] = optional_json(r.map_nonrare);
  j["mAP_temporal"] = optional_json(r.map_temporal);
  j["mAP_spatial"] = optional_json(r.map_spatial);
  j["num_keyframes"] = r.num_keyframes;
  j["num_detections"] = r.num_detections;
  j["truncated_keyframes"] = r.truncated_keyframes;
  j["videos_without_trajectories"] = r.videos_without_trajectories;
  json trip = json::array();
  for (const auto& t : r.triplets) {
    trip.push_back({{"triplet", t.triplet}, {"name", t.name}, {"n_gt", t.n_gt}, {"n_det", t.n_det},
                    {"train_count", t.train_count}, {"rare", t.rare}, {"ap", optional_json(t.ap)}});
  }
  j["triplets"] = std::move(trip);
  json preds = json::array();
  for (const auto& p : r.predicates) {
    preds.push_back({{"predicate", p.predicate}, {"name", p.name}, {"temporal", p.temporal},
                     {"n_gt", p.n_gt}, {"ap", optional_json(p.ap)}});
  }
  j["predicates"] = std::move(preds);
  return j;
}

inline std::optional<double> optional_number(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

/// Inverse of report_json for the fields the tables use.
inline EvalReport parse_report(const json& j) {
  try {
    EvalReport r;
    r.mode = parse_eval_mode(j.at("mode").get<std::string>());
    r.map_full = optional_number(j.at("mAP_full"));
    r.map_rare = optional_number(j.at("mAP_rare"));
    r.map_nonrare = optional_number(j.at("mAP_nonrare"));
    r.map_temporal = optional_number(j.at("mAP_temporal"));
    r.map_spatial = optional_number(j.at("mAP_spatial"));
    r.num_keyframes = j.at("num_keyframes").get<std::size_t>();
    r.num_detections = j.at("num_detections").get<std::size_t>();
    r.truncated_keyframes = j.at("truncated_keyframes").get<std::size_t>();
    r.videos_without_trajectories = j.at("videos_without_trajectories").get<std::vector<std::string>>();
    for (const auto& t : j.at("triplets")) {
      TripletAp row;
      row.triplet = t.at("triplet").get<int>();
      row.name = t.at("name").get<std::string>();
      row.n_gt = t.at("n_gt").get<std::size_t>();
      row.n_det = t.at("n_det").get<std::size_t>();
      row.train_count = t.at("train_count").get<long>();
      row.rare = t.at("rare").get<bool>();
      row.ap = optional_number(t.at("ap"));
      r.triplets.push_back(std::move(row));
    }
    for (const auto& p : j.at("predicates")) {
      PredicateAp row;
      row.predicate = p.at("predicate").get<int>();
      row.name = p.at("name").get<std::string>();
      row.temporal = p.at("temporal").get<bool>();
      row.n_gt = p.at("n_gt").get<std::size_t>();
      row.ap = optional_number(p.at("ap"));
      r.predicates.push_back(std::move(row));
    }
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("report: ") + e.what());
  }
}

inline std::string fmt_ap(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

inline std::string triplet_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "triplet,name,n_gt,n_det,train_count,rare,ap\n";
  for (const auto& t : r.triplets) {
    os << t.triplet << ',' << t.name << ',' << t.n_gt << ',' << t.n_det << ',' << t.train_count << ','
       << (t.rare ? 1 : 0) << ',' << fmt_ap(t.ap) << '\n';
  }
  return os.str();
}

inline std::string predicate_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "predicate,name,temporal,n_gt,ap\n";
  for (const auto& p : r.predicates) {
    os << p.predicate << ',' << p.name << ',' << (p.temporal ? 1 : 0) << ',' << p.n_gt << ',' << fmt_ap(p.ap)
       << '\n';
  }
  return os.str();
}

/// Writes report.json, triplet_ap.csv and predicate_ap.csv into `dir`.
inline void write_report(const std::filesystem::path& dir, const EvalReport& r) {
  std::filesystem::create_directories(dir);
  write_text_file((dir / "report.json").string(), report_json(r).dump(2) + "\n");
  write_text_file((dir / "triplet_ap.csv").string(), triplet_csv(r));
  write_text_file((dir / "predicate_ap.csv").string(), predicate_csv(r));
}

// Detections file: one JSON object per line.
inline json detection_json(const Detection& d) {
  return json{{"video_id", d.video_id},
              {"keyframe_index", d.keyframe_index},
              {"human_box", schema::box_json(d.human_box)},
              {"object_box", schema::box_json(d.object_box)},
              {"object_category", d.object_category},
              {"predicate_id", d.predicate_id},
              {"score", d.score}};
}

inline Detection parse_detection(const json& j, const std::string& path) {
  using namespace schema;
  if (!j.is_object()) fail(path, "expected an object");
  Detection d;
  d.video_id = get_string(j, "video_id", path);
  d.keyframe_index = get_int(j, "keyframe_index", path);
  d.human_box = parse_box(field(j, "human_box", path), path + ".human_box");
  d.object_box = parse_box(field(j, "object_box", path), path + ".object_box");
  d.object_category = get_int(j, "object_category", path);
  d.predicate_id = get_int(j, "predicate_id", path);
  d.score = get_number(j, "score", path);
  validate_detection(d);
  return d;
}

inline void save_detections(const std::string& path, const std::vector<Detection>& dets) {
  std::ostringstream os;
  for (const auto& d : dets) os << detection_json(d).dump() << '\n';
  write_text_file(path, os.str());
}

inline std::vector<Detection> load_detections(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open detections file " + path);
  std::vector<Detection> out;
  std::string line;
  for (std::size_t n = 1; std::getline(f, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError(detail::concat(path, ":", n, ": ", e.what()));
    }
    out.push_back(parse_detection(j, detail::concat("line ", n)));
  }
  return out;
}

struct PairedReports {
  EvalReport oracle;
  EvalReport detection;
};

/// Runs the model twice over one split: with GT trajectories and with `tracks`.
/// Videos absent from `tracks` contribute only false negatives.
inline EvalReport run_mode(const Model& model, const Split& split, const Taxonomy& tax, const WindowConfig& win,
                           const AugmentConfig& aug, EvalMode mode, const AnnotationSet* tracks,
                           std::vector<Detection>* dets_out = nullptr) {
  if (mode == EvalMode::kDetection && !tracks) throw InputError("detection mode requires trajectories");
  const auto samples = build_samples(split, tax, win, mode == EvalMode::kDetection ? tracks : nullptr);
  const auto dets = predict_samples(model, samples, aug);
  if (dets_out) *dets_out = dets;
  auto rep = evaluate(dets, ground_truth(split.ann, split.keyframes, tax), split.keyframes, tax,
                      rarity_split(tax), mode);
  if (mode == EvalMode::kDetection) {
    for (const auto& v : split.ann.videos) {
      if (!tracks->find(v.video_id)) rep.videos_without_trajectories.push_back(v.video_id);
    }
  }
  return rep;
}

inline PairedReports paired_mode_run(const Model& model, const Split& split, const Taxonomy& tax,
                                     const WindowConfig& win, const AugmentConfig& aug,
                                     const AnnotationSet& tracks) {
  return {run_mode(model, split, tax, win, aug, EvalMode::kOracle, nullptr),
          run_mode(model, split, tax, win, aug, EvalMode::kDetection, &tracks)};
}

/// Report equality ignoring the mode field.
inline bool same_metrics(const EvalReport& a, const EvalReport& b) {
  auto strip = [](const EvalReport& r) {
    json j = report_json(r);
    j.erase("mode");
    return j;
  };
  return strip(a) == strip(b);
}

}  // namespace sthoi
