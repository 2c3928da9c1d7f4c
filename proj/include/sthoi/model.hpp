#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sthoi/autograd.hpp"
#include "sthoi/features.hpp"
#include "sthoi/nn.hpp"
#include "sthoi/sample.hpp"

namespace sthoi {

/// Ablation grid: which feature blocks are concatenated before the head.
enum class Variant { kBaseline2d, kNaive3d, kT, kTV, kTP, kTVP };

inline constexpr std::array<Variant, 6> kAllVariants = {
    Variant::kBaseline2d, Variant::kNaive3d, Variant::kT, Variant::kTV, Variant::kTP, Variant::kTVP};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline2d: return "baseline2d";
    case Variant::kNaive3d: return "naive3d";
    case Variant::kT: return "T";
    case Variant::kTV: return "T+V";
    case Variant::kTP: return "T+P";
    case Variant::kTVP: return "T+V+P";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  throw InputError("unknown variant '" + s + "' (expected baseline2d, naive3d, T, T+V, T+P, T+V+P)");
}

inline bool uses_trajectory(Variant v) { return v != Variant::kBaseline2d && v != Variant::kNaive3d; }
inline bool uses_toi(Variant v) { return v == Variant::kTV || v == Variant::kTVP; }
inline bool uses_pose(Variant v) { return v == Variant::kTP || v == Variant::kTVP; }

enum class ScoreMode { kSigmoid, kSoftmax };

struct ModelConfig {
  Variant variant = Variant::kTVP;
  std::size_t num_predicates = 1;
  std::size_t segment_len = 8;
  std::array<std::size_t, 3> backbone_channels = {16, 32, 64};
  RoiAlignConfig roi;
  std::size_t hidden = 512;
  PoseFeatureConfig pose;
  ScoreMode score_mode = ScoreMode::kSigmoid;
  std::uint64_t seed = 0;

  std::size_t feature_dim() const { return backbone_channels[2]; }

  /// Length of the fused pair vector [v_s; v_u; v_o; j_s; j_o; p_so].
  std::size_t fused_length() const {
    std::size_t n = 3 * feature_dim() * roi.out_h * roi.out_w;
    if (uses_trajectory(variant)) n += 2 * segment_len * 4;
    if (uses_pose(variant)) n += pose.channels2;
    return n;
  }

  void validate() const {
    if (num_predicates == 0) throw InputError("model config: num_predicates must be >= 1");
    if (segment_len == 0) throw InputError("model config: segment_len must be >= 1");
    if (hidden == 0) throw InputError("model config: hidden width must be >= 1");
    for (auto c : backbone_channels) {
      if (c == 0) throw InputError("model config: backbone channels must be positive");
    }
    if (roi.out_h == 0 || roi.out_w == 0 || roi.samples_per_bin == 0) {
      throw InputError("model config: roi size and samples must be positive");
    }
    if (pose.mask_size == 0) throw InputError("model config: pose mask size must be positive");
  }
};

/// Small single-pathway 3D CNN: spatial stride 4 overall, temporal stride 1.
class Backbone {
 public:
  static constexpr double kSpatialScale = 0.25;

  Backbone(const std::array<std::size_t, 3>& ch, std::mt19937_64& rng)
      : conv1_w("backbone.conv1.weight", kaiming_uniform({ch[0], 3, 3, 4, 4}, 3 * 48, rng)),
        conv1_b("backbone.conv1.bias", Tensor::zeros({ch[0]})),
        conv2_w("backbone.conv2.weight", kaiming_uniform({ch[1], ch[0], 3, 4, 4}, ch[0] * 48, rng)),
        conv2_b("backbone.conv2.bias", Tensor::zeros({ch[1]})),
        conv3_w("backbone.conv3.weight", kaiming_uniform({ch[2], ch[1], 3, 3, 3}, ch[1] * 27, rng)),
        conv3_b("backbone.conv3.bias", Tensor::zeros({ch[2]})) {}

  /// [3 x T x H x W] -> [d x T x H/4 x W/4]
  ag::Var operator()(const ag::Var& frames) const {
    constexpr kernels::Triple down{1, 2, 2}, same{1, 1, 1};
    auto h = ag::relu(ag::conv3d(frames, conv1_w.var, conv1_b.var, down, same));
    h = ag::relu(ag::conv3d(h, conv2_w.var, conv2_b.var, down, same));
    return ag::relu(ag::conv3d(h, conv3_w.var, conv3_b.var, same, same));
  }

  std::vector<Parameter*> parameters() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &conv3_w, &conv3_b};
  }

  Parameter conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
};

/// Trajectory feature: per-frame boxes normalised by frame size, subject then object.
inline Tensor trajectory_feature(const Trajectory& subject, const Trajectory& object, double frame_w,
                                 double frame_h) {
  if (subject.length() != object.length()) throw ShapeError("trajectory_feature: lengths differ");
  const std::size_t T = subject.length();
  Tensor out(Shape{2 * T * 4});
  std::size_t k = 0;
  for (const Trajectory* tr : {&subject, &object}) {
    for (std::size_t t = 0; t < T; ++t) {
      const Box& b = tr->boxes[t];
      out[k++] = std::clamp(b.x1 / frame_w, 0.0, 1.0);
      out[k++] = std::clamp(b.y1 / frame_h, 0.0, 1.0);
      out[k++] = std::clamp(b.x2 / frame_w, 0.0, 1.0);
      out[k++] = std::clamp(b.y2 / frame_h, 0.0, 1.0);
    }
  }
  return out;
}

/// Per-frame union of two trajectories.
inline Trajectory union_trajectory(const Trajectory& a, const Trajectory& b) {
  Trajectory u;
  u.instance_id = a.instance_id + "+" + b.instance_id;
  u.category_id = -1;
  for (std::size_t t = 0; t < a.length(); ++t) {
    u.boxes.push_back(union_box(a.boxes[t], b.boxes[t]));
    u.valid.push_back(true);
  }
  return u;
}

struct PairScores {
  PairProposal pair;
  std::vector<double> scores;
};

struct ForwardResult {
  ag::Var logits;  // [pairs x C]; empty when the sample has no pair
  std::vector<PairScores> scores;
};

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    backbone_.emplace(cfg_.backbone_channels, rng_);
    if (uses_pose(cfg_.variant)) pose_.emplace(cfg_.pose, rng_);
    const std::size_t F = cfg_.fused_length();
    fc1_w_.emplace("head.fc1.weight", kaiming_uniform({cfg_.hidden, F}, F, rng_));
    fc1_b_.emplace("head.fc1.bias", Tensor::zeros({cfg_.hidden}));
    fc2_w_.emplace("head.fc2.weight",
                   kaiming_uniform({cfg_.num_predicates, cfg_.hidden}, cfg_.hidden, rng_));
    fc2_b_.emplace("head.fc2.bias", Tensor::zeros({cfg_.num_predicates}));
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps = backbone_->parameters();
    if (pose_) {
      auto pp = pose_->parameters();
      ps.insert(ps.end(), pp.begin(), pp.end());
    }
    for (auto* p : {&*fc1_w_, &*fc1_b_, &*fc2_w_, &*fc2_b_}) ps.push_back(p);
    return ps;
  }

  Backbone& backbone() { return *backbone_; }

  /// Scores every M x (N-1) pair of a filled sample.
  ForwardResult forward(const KeyframeSample& s) const {
    ForwardResult res;
    const auto pairs = s.pairs.empty() ? enumerate_pairs(s.trajectories) : s.pairs;
    if (pairs.empty()) return res;
    if (s.window() != cfg_.segment_len) {
      throw ShapeError(detail::concat("forward: sample window ", s.window(), " but model expects ",
                                      cfg_.segment_len));
    }
    for (const auto& t : s.trajectories) {
      if (!t.all_valid()) throw InputError("forward: trajectories must be filled");
      if (t.length() != s.window()) throw ShapeError("forward: trajectory length != window");
    }
    const double fw = static_cast<double>(s.width()), fh = static_cast<double>(s.height());
    const double scale = Backbone::kSpatialScale;
    const std::size_t c = s.center;

    ag::Var map;
    ag::Var pooled_map;  // temporal mean, for the naive order
    if (cfg_.variant == Variant::kBaseline2d) {
      map = (*backbone_)(ag::constant(center_frame(s.frames, c)));
    } else {
      map = (*backbone_)(ag::constant(s.frames));
      if (!uses_toi(cfg_.variant)) pooled_map = ag::mean_pool(map, {1});
    }

    std::vector<ag::Var> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) {
      const Trajectory& hs = s.trajectories[p.human_index];
      const Trajectory& ob = s.trajectories[p.object_index];
      const Trajectory un = union_trajectory(hs, ob);
      std::vector<ag::Var> parts;
      switch (cfg_.variant) {
        case Variant::kBaseline2d:
          for (const Trajectory* tr : {&hs, &un, &ob}) {
            parts.push_back(roi_align(map, tr->boxes[c], scale, cfg_.roi, std::size_t{0}));
          }
          break;
        case Variant::kNaive3d:
        case Variant::kT:
        case Variant::kTP:
          for (const Trajectory* tr : {&hs, &un, &ob}) {
            parts.push_back(roi_align(pooled_map, tr->boxes[c], scale, cfg_.roi));
          }
          break;
        case Variant::kTV:
        case Variant::kTVP:
          for (const Trajectory* tr : {&hs, &un, &ob}) {
            parts.push_back(toi_pool(map, *tr, scale, cfg_.roi));
          }
          break;
      }
      if (uses_trajectory(cfg_.variant)) {
        parts.push_back(ag::constant(trajectory_feature(hs, ob, fw, fh)));
      }
      if (uses_pose(cfg_.variant)) {
        static const std::vector<std::optional<Pose>> kNoPose;
        const auto& poses = p.human_index < s.poses.size() ? s.poses[p.human_index] : kNoPose;
        parts.push_back(masking_pose_feature(*pose_, poses, hs, ob, s.width(), s.height(), cfg_.pose));
      }
      rows.push_back(ag::concat(parts));
    }
    if (rows.front().size() != cfg_.fused_length()) {
      throw ShapeError(detail::concat("fused feature length ", rows.front().size(), " != configured ",
                                      cfg_.fused_length()));
    }
    auto x = ag::stack_rows(rows);
    auto h = ag::relu(ag::linear(x, fc1_w_->var, fc1_b_->var));
    res.logits = ag::linear(h, fc2_w_->var, fc2_b_->var);

    const std::size_t C = cfg_.num_predicates;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      PairScores ps{pairs[i], std::vector<double>(C)};
      const double* z = res.logits.value().ptr() + i * C;
      if (cfg_.score_mode == ScoreMode::kSigmoid) {
        for (std::size_t k = 0; k < C; ++k) ps.scores[k] = ag::sigmoid_scalar(z[k]);
      } else {
        const double mx = *std::max_element(z, z + C);
        double sum = 0.0;
        for (std::size_t k = 0; k < C; ++k) sum += std::exp(z[k] - mx);
        for (std::size_t k = 0; k < C; ++k) {
          ps.scores[k] = std::clamp(std::exp(z[k] - mx) / sum, std::numeric_limits<double>::min(),
                                    std::nextafter(1.0, 0.0));
        }
      }
      res.scores.push_back(std::move(ps));
    }
    return res;
  }

  void save(const std::string& path) { checkpoint::save(path, parameters()); }
  void load(const std::string& path) {
    auto ps = parameters();
    checkpoint::load(path, ps);
  }

  std::vector<unsigned char> checkpoint_bytes() {
    checkpoint::NamedTensors named;
    for (auto* p : parameters()) named.emplace_back(p->name, p->value());
    return checkpoint::encode(named);
  }

 private:
  static Tensor center_frame(const Tensor& frames, std::size_t c) {
    const std::size_t C = frames.dim(0), T = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
    Tensor out(Shape{C, 1, H, W});
    for (std::size_t ch = 0; ch < C; ++ch) {
      std::copy_n(frames.ptr() + (ch * T + c) * H * W, H * W, out.ptr() + ch * H * W);
    }
    return out;
  }

  ModelConfig cfg_;
  std::mt19937_64 rng_;
  std::optional<Backbone> backbone_;
  std::optional<PoseEncoder> pose_;
  std::optional<Parameter> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

/// Expands pair scores into per-predicate detections, best first, truncated to `top_k`.
/// Ties are broken by pair index, then predicate index. Boxes are read from
/// `boxes_from` when given (same trajectory order, e.g. before resizing).
inline std::vector<Detection> predict_keyframe(const Model& model, const KeyframeSample& s,
                                               std::size_t top_k = 100,
                                               const KeyframeSample* boxes_from = nullptr) {
  const auto fr = model.forward(s);
  struct Cand {
    double score;
    std::size_t pair, pred;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < fr.scores.size(); ++i) {
    for (std::size_t k = 0; k < fr.scores[i].scores.size(); ++k) {
      cands.push_back({fr.scores[i].scores[k], i, k});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.pair != b.pair) return a.pair < b.pair;
    return a.pred < b.pred;
  });
  if (cands.size() > top_k) cands.resize(top_k);
  std::vector<Detection> out;
  out.reserve(cands.size());
  for (const auto& c : cands) {
    const auto& p = fr.scores[c.pair].pair;
    Detection d;
    d.video_id = s.video_id;
    d.keyframe_index = s.keyframe_index;
    const KeyframeSample& src = boxes_from ? *boxes_from : s;
    d.human_box = src.trajectories[p.human_index].boxes[src.center];
    d.object_box = src.trajectories[p.object_index].boxes[src.center];
    d.object_category = s.trajectories[p.object_index].category_id;
    d.predicate_id = static_cast<int>(c.pred);
    d.score = c.score;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace sthoi
