#pragma once

// Independent reference implementations used only by tests and the
// verification suites. Each one is written for clarity, not speed, and shares
// no helper with the production code path it checks.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sthoi/eval.hpp"
#include "sthoi/features.hpp"
#include "sthoi/geometry.hpp"
#include "sthoi/tensor.hpp"

namespace sthoi::oracle {

// ---------------------------------------------------------------------------
// RoIAlign by direct per-sample bilinear interpolation
// ---------------------------------------------------------------------------

/// Value of plane `c` of a [C x H x W] map at continuous point (x, y), where
/// pixel (r, q) has its centre at (q + 0.5, r + 0.5). Outside pixels read 0.
inline double bilinear_zero_pad(const Tensor& map, std::size_t c, double x, double y) {
  const long H = static_cast<long>(map.dim(1)), W = static_cast<long>(map.dim(2));
  auto px = [&](long r, long q) -> double {
    if (r < 0 || q < 0 || r >= H || q >= W) return 0.0;
    return map.at(c, static_cast<std::size_t>(r), static_cast<std::size_t>(q));
  };
  const double gx = x - 0.5, gy = y - 0.5;
  const long q0 = static_cast<long>(std::floor(gx)), r0 = static_cast<long>(std::floor(gy));
  const double ax = gx - static_cast<double>(q0), ay = gy - static_cast<double>(r0);
  return (1 - ay) * ((1 - ax) * px(r0, q0) + ax * px(r0, q0 + 1)) +
         ay * ((1 - ax) * px(r0 + 1, q0) + ax * px(r0 + 1, q0 + 1));
}

/// [C x out_h x out_w]: every bin is the mean of S x S evenly spaced samples.
inline Tensor roi_align(const Tensor& map, const Box& box, double spatial_scale, std::size_t out_h,
                        std::size_t out_w, std::size_t samples) {
  Tensor out(Shape{map.dim(0), out_h, out_w});
  const double x1 = box.x1 * spatial_scale, y1 = box.y1 * spatial_scale;
  const double w = (box.x2 - box.x1) * spatial_scale, h = (box.y2 - box.y1) * spatial_scale;
  if (!(w > 0.0 && h > 0.0)) return out;
  const double S = static_cast<double>(samples);
  for (std::size_t c = 0; c < map.dim(0); ++c) {
    for (std::size_t i = 0; i < out_h; ++i) {
      for (std::size_t j = 0; j < out_w; ++j) {
        double sum = 0.0;
        for (std::size_t a = 0; a < samples; ++a) {
          for (std::size_t b = 0; b < samples; ++b) {
            const double y = y1 + h * (static_cast<double>(i) + (static_cast<double>(a) + 0.5) / S) /
                                      static_cast<double>(out_h);
            const double x = x1 + w * (static_cast<double>(j) + (static_cast<double>(b) + 0.5) / S) /
                                      static_cast<double>(out_w);
            sum += bilinear_zero_pad(map, c, x, y);
          }
        }
        out.at(c, i, j) = sum / (S * S);
      }
    }
  }
  return out;
}

/// Frame `t` of a [C x T x H x W] map as [C x H x W].
inline Tensor frame_of(const Tensor& map, std::size_t t) {
  const std::size_t C = map.dim(0), H = map.dim(2), W = map.dim(3);
  Tensor out(Shape{C, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) out.at(c, y, x) = map.at(c, t, y, x);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Central finite differences
// ---------------------------------------------------------------------------

inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double eps = 1e-6) {
  Tensor g(x.shape());
  Tensor p = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = x[i] + eps;
    const double up = f(p);
    p[i] = x[i] - eps;
    const double down = f(p);
    p[i] = x[i];
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Exact rational arithmetic for AP
// ---------------------------------------------------------------------------

struct Rational {
  __int128 num = 0;
  __int128 den = 1;

  static __int128 gcd(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    return a == 0 ? 1 : a;
  }
  Rational() = default;
  Rational(__int128 n, __int128 d) : num(n), den(d) {
    const __int128 g = gcd(num, den);
    num /= g;
    den /= g;
  }
  friend Rational operator+(const Rational& a, const Rational& b) {
    return Rational(a.num * b.den + b.num * a.den, a.den * b.den);
  }
  friend bool operator<(const Rational& a, const Rational& b) { return a.num * b.den < b.num * a.den; }
  double to_double() const { return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den)); }
};

/// All-point AP by exhaustive enumeration of PR points: for every recall level
/// reached at a TP rank, take the best precision at any rank with at least that
/// recall. Exact rational result; nullopt when there is no GT.
inline std::optional<Rational> exact_ap(const std::vector<bool>& tp, std::size_t n_gt) {
  if (n_gt == 0) return std::nullopt;
  std::vector<Rational> precision;
  std::vector<std::size_t> recall_hits;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    hits += tp[k];
    precision.emplace_back(static_cast<__int128>(hits), static_cast<__int128>(k + 1));
    recall_hits.push_back(hits);
  }
  Rational ap;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (!tp[k]) continue;
    Rational best;
    for (std::size_t j = 0; j < tp.size(); ++j) {
      if (recall_hits[j] >= recall_hits[k] && best < precision[j]) best = precision[j];
    }
    ap = ap + Rational(best.num, best.den * static_cast<__int128>(n_gt));
  }
  return ap;
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

/// Detections in canonical order, written out as an explicit key comparison.
inline std::vector<Detection> sorted(std::vector<Detection> d) {
  std::sort(d.begin(), d.end(), [](const Detection& a, const Detection& b) {
    if (a.score > b.score) return true;
    if (a.score < b.score) return false;
    const std::vector<double> ka{a.human_box.x1, a.human_box.y1, a.human_box.x2, a.human_box.y2,
                                 a.object_box.x1, a.object_box.y1, a.object_box.x2, a.object_box.y2};
    const std::vector<double> kb{b.human_box.x1, b.human_box.y1, b.human_box.x2, b.human_box.y2,
                                 b.object_box.x1, b.object_box.y1, b.object_box.x2, b.object_box.y2};
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    if (a.keyframe_index != b.keyframe_index) return a.keyframe_index < b.keyframe_index;
    if (ka != kb) return ka < kb;
    if (a.predicate_id != b.predicate_id) return a.predicate_id < b.predicate_id;
    return a.object_category < b.object_category;
  });
  return d;
}

inline double pair_overlap(const Detection& d, const GtInstance& g) {
  if (d.video_id != g.video_id || d.keyframe_index != g.keyframe_index) return -1.0;
  return std::min(iou(d.human_box, g.human_box), iou(d.object_box, g.object_box));
}

/// Greedy matching from a precomputed overlap matrix; ties go to the lowest GT index.
inline std::vector<bool> greedy_tp(const std::vector<Detection>& dets, const std::vector<GtInstance>& gts) {
  std::vector<std::vector<double>> ov(dets.size(), std::vector<double>(gts.size()));
  for (std::size_t i = 0; i < dets.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) ov[i][j] = pair_overlap(dets[i], gts[j]);
  }
  std::vector<bool> taken(gts.size(), false), tp(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::optional<std::size_t> best;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (taken[j] || ov[i][j] < 0.0) continue;
      if (!best || ov[i][j] > ov[i][*best]) best = j;
    }
    if (best && ov[i][*best] > 0.5) {
      taken[*best] = true;
      tp[i] = true;
    }
  }
  return tp;
}

/// Largest number of detections that can be matched one-to-one to GT with
/// overlap above 0.5, by exhaustive search.
inline std::size_t max_matching(const std::vector<Detection>& dets, const std::vector<GtInstance>& gts) {
  std::vector<bool> used(gts.size(), false);
  std::function<std::size_t(std::size_t)> go = [&](std::size_t i) -> std::size_t {
    if (i == dets.size()) return 0;
    std::size_t best = go(i + 1);
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[j] || !(pair_overlap(dets[i], gts[j]) > 0.5)) continue;
      used[j] = true;
      best = std::max(best, 1 + go(i + 1));
      used[j] = false;
    }
    return best;
  };
  return go(0);
}

// ---------------------------------------------------------------------------
// Whole-report oracle
// ---------------------------------------------------------------------------

struct OracleReport {
  std::map<std::pair<int, int>, std::optional<double>> triplet_ap;  // (predicate, category)
  std::map<int, std::optional<double>> predicate_ap;
  std::optional<double> map_full, map_rare, map_nonrare;
};

/// Reference evaluation: top-100 per keyframe, per-(predicate, category)
/// greedy matching and exact AP, pooled-category predicate AP. `rare` is
/// decided by the caller-supplied training counts (< 25 is rare).
inline OracleReport evaluate(const std::vector<Detection>& all_dets, const std::vector<GtInstance>& gts,
                             std::size_t num_predicates,
                             const std::map<std::pair<int, int>, long>& train_counts) {
  std::vector<Detection> dets;
  {
    std::map<std::pair<std::string, int>, std::size_t> per_kf;
    for (const auto& d : sorted(all_dets)) {
      if (per_kf[{d.video_id, d.keyframe_index}]++ < 100) dets.push_back(d);
    }
  }
  OracleReport r;
  std::set<std::pair<int, int>> keys;
  for (const auto& g : gts) keys.insert({g.predicate_id, g.object_category});
  std::vector<double> full, rare, nonrare;
  for (const auto& key : keys) {
    std::vector<Detection> d;
    std::vector<GtInstance> g;
    for (const auto& x : dets) {
      if (x.predicate_id == key.first && x.object_category == key.second) d.push_back(x);
    }
    for (const auto& x : gts) {
      if (x.predicate_id == key.first && x.object_category == key.second) g.push_back(x);
    }
    const auto ap = exact_ap(greedy_tp(d, g), g.size());
    const double v = ap->to_double();
    r.triplet_ap[key] = v;
    full.push_back(v);
    auto it = train_counts.find(key);
    const long count = it == train_counts.end() ? 0 : it->second;
    (count < 25 ? rare : nonrare).push_back(v);
  }
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  r.map_full = mean(full);
  r.map_rare = mean(rare);
  r.map_nonrare = mean(nonrare);
  for (std::size_t p = 0; p < num_predicates; ++p) {
    std::vector<Detection> d;
    std::vector<GtInstance> g;
    for (const auto& x : dets) {
      if (x.predicate_id == static_cast<int>(p)) d.push_back(x);
    }
    for (const auto& x : gts) {
      if (x.predicate_id == static_cast<int>(p)) g.push_back(x);
    }
    const auto ap = exact_ap(greedy_tp(d, g), g.size());
    r.predicate_ap[static_cast<int>(p)] = ap ? std::optional<double>(ap->to_double()) : std::nullopt;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Random small scenarios
// ---------------------------------------------------------------------------

struct Scenario {
  Taxonomy taxonomy;
  std::vector<KeyframeRef> keyframes;
  std::vector<GtInstance> gts;
  std::vector<Detection> dets;
  std::map<std::pair<int, int>, long> train_counts;
};

/// At most 5 GT and 5 detections per (predicate, category). Boxes are drawn
/// from a small pool (plus jittered copies) and scores from a coarse grid, so
/// exact ties, duplicate detections and near-threshold overlaps are common.
inline Scenario random_scenario(std::mt19937_64& rng) {
  Scenario s;
  auto U = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  s.taxonomy.predicates = {{"p0", true}, {"p1", false}};
  s.taxonomy.object_categories = {kPersonName, "c1", "c2"};
  const int n_kf = U(1, 3);
  for (int k = 0; k < n_kf; ++k) s.keyframes.push_back({"v" + std::to_string(U(0, 1)), 8 * k});
  std::sort(s.keyframes.begin(), s.keyframes.end());
  s.keyframes.erase(std::unique(s.keyframes.begin(), s.keyframes.end()), s.keyframes.end());
  const std::vector<Box> pool = {{0, 0, 10, 10}, {5, 0, 15, 10}, {20, 20, 30, 30}, {1, 1, 11, 11},
                                 {0, 0, 20, 20}, {2, 0, 12, 10}, {40, 0, 50, 10}};
  auto box = [&] {
    Box b = pool[static_cast<std::size_t>(U(0, static_cast<int>(pool.size()) - 1))];
    if (U(0, 2) == 0) {
      const double d = U(0, 4);
      b.x1 += d;
      b.x2 += d;
    }
    return b;
  };
  const double scores[] = {0.1, 0.3, 0.5, 0.5, 0.7, 0.9, 1.0};
  for (int p = 0; p < 2; ++p) {
    for (int c = 0; c < 3; ++c) {
      if (U(0, 3) == 0) continue;
      const int n_gt = U(0, 5), n_det = U(0, 5);
      for (int i = 0; i < n_gt; ++i) {
        const auto& kf = s.keyframes[static_cast<std::size_t>(U(0, static_cast<int>(s.keyframes.size()) - 1))];
        s.gts.push_back({kf.video_id, kf.frame, box(), box(), c, p, false});
      }
      for (int i = 0; i < n_det; ++i) {
        const auto& kf = s.keyframes[static_cast<std::size_t>(U(0, static_cast<int>(s.keyframes.size()) - 1))];
        Detection d{kf.video_id, kf.frame, box(), box(), c, p, scores[U(0, 6)]};
        if (!s.gts.empty() && U(0, 1) == 0) {
          // Copy a GT's boxes so true positives are frequent.
          const auto& g = s.gts[static_cast<std::size_t>(U(0, static_cast<int>(s.gts.size()) - 1))];
          d.video_id = g.video_id;
          d.keyframe_index = g.keyframe_index;
          d.human_box = g.human_box;
          d.object_box = g.object_box;
        }
        s.dets.push_back(d);
      }
      const std::array<long, 4> counts = {0, 24, 25, 100};
      s.train_counts[{p, c}] = counts[static_cast<std::size_t>(U(0, 3))];
    }
  }
  for (const auto& [key, count] : s.train_counts) {
    const int id = s.taxonomy.ensure_triplet(key.first, key.second);
    s.taxonomy.triplets[static_cast<std::size_t>(id)].count = count;
  }
  return s;
}

}  // namespace sthoi::oracle
