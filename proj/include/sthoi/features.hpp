#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "sthoi/autograd.hpp"
#include "sthoi/geometry.hpp"
#include "sthoi/log.hpp"
#include "sthoi/nn.hpp"

namespace sthoi {

/// Backbone output: [d x T x H' x W'] plus the ratio of feature to frame resolution.
struct FeatureMap {
  Tensor tensor;
  double spatial_scale = 1.0;

  std::size_t channels() const { return tensor.dim(0); }
  std::size_t frames() const { return tensor.dim(1); }
};

/// RoI-pooled feature [d x h x w].
struct PooledFeature {
  Tensor tensor;
};

struct RoiAlignConfig {
  std::size_t out_h = 7;
  std::size_t out_w = 7;
  std::size_t samples_per_bin = 2;
};

inline constexpr std::size_t kNumJoints = 17;

/// 17 COCO keypoints in frame pixel coordinates.
struct Pose {
  std::array<std::array<double, 2>, kNumJoints> keypoints{};
  std::array<bool, kNumJoints> valid{};

  bool any_valid() const {
    for (bool v : valid) {
      if (v) return true;
    }
    return false;
  }
};

struct SkeletonEdge {
  std::size_t joint_a;
  std::size_t joint_b;
  double value;
};

struct SkeletonEdgeTable {
  std::vector<SkeletonEdge> edges;

  /// 16-edge COCO-17 skeleton with values (i+1)/16 in table order.
  static SkeletonEdgeTable coco17() {
    static constexpr std::size_t pairs[16][2] = {
        {0, 1},  {0, 2},   {1, 3},   {2, 4},    // face
        {5, 7},  {7, 9},   {6, 8},   {8, 10},   // arms
        {11, 13}, {13, 15}, {12, 14}, {14, 16},  // legs
        {5, 6},  {11, 12}, {5, 11},  {6, 12},   // torso
    };
    SkeletonEdgeTable t;
    for (std::size_t i = 0; i < 16; ++i) {
      t.edges.push_back({pairs[i][0], pairs[i][1], static_cast<double>(i + 1) / 16.0});
    }
    return t;
  }

  void validate() const {
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const auto& e = edges[i];
      if (e.joint_a >= kNumJoints || e.joint_b >= kNumJoints) {
        throw InputError(detail::concat("skeleton edge ", i, " references joint outside [0,17)"));
      }
      if (!(e.value > 0.0 && e.value <= 1.0)) {
        throw InputError(detail::concat("skeleton edge ", i, " value must lie in (0,1]"));
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (edges[j].value == e.value) {
          throw InputError(detail::concat("skeleton edges ", j, " and ", i, " share a value"));
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// RoIAlign
// ---------------------------------------------------------------------------

namespace roi {

struct Tap {
  std::size_t index;  // offset inside one H x W plane
  double weight;
};

/// Bilinear taps for every output bin. Continuous coordinate c maps to array
/// position c - 0.5; neighbours outside the plane are dropped (read as zero).
/// Each bin's weights already include the 1/S^2 averaging.
inline std::vector<std::vector<Tap>> bin_taps(const Box& scaled, std::size_t H, std::size_t W,
                                              const RoiAlignConfig& cfg) {
  const std::size_t S = cfg.samples_per_bin;
  const double bin_h = scaled.height() / static_cast<double>(cfg.out_h);
  const double bin_w = scaled.width() / static_cast<double>(cfg.out_w);
  const double norm = 1.0 / static_cast<double>(S * S);
  std::vector<std::vector<Tap>> taps(cfg.out_h * cfg.out_w);
  for (std::size_t i = 0; i < cfg.out_h; ++i) {
    for (std::size_t j = 0; j < cfg.out_w; ++j) {
      auto& bin = taps[i * cfg.out_w + j];
      for (std::size_t sy = 0; sy < S; ++sy) {
        const double y = scaled.y1 + bin_h * (static_cast<double>(i) +
                                              (static_cast<double>(sy) + 0.5) / static_cast<double>(S));
#ifdef STHOI_FAULT_INJECT_ROIALIGN
        const double py = y;  // deliberately wrong: drops the half-pixel offset
#else
        const double py = y - 0.5;
#endif
        const double fy = std::floor(py);
        const double ly = py - fy;
        for (std::size_t sx = 0; sx < S; ++sx) {
          const double x = scaled.x1 + bin_w * (static_cast<double>(j) +
                                                (static_cast<double>(sx) + 0.5) / static_cast<double>(S));
          const double px = x - 0.5;
          const double fx = std::floor(px);
          const double lx = px - fx;
          const double wy[2] = {1.0 - ly, ly};
          const double wx[2] = {1.0 - lx, lx};
          for (int dy = 0; dy < 2; ++dy) {
            const double r = fy + dy;
            if (r < 0.0 || r >= static_cast<double>(H)) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const double c = fx + dx;
              if (c < 0.0 || c >= static_cast<double>(W)) continue;
              const double w = wy[dy] * wx[dx] * norm;
              if (w == 0.0) continue;
              bin.push_back({static_cast<std::size_t>(r) * W + static_cast<std::size_t>(c), w});
            }
          }
        }
      }
    }
  }
  return taps;
}

inline Box scale_box(const Box& b, double s) { return Box{b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s}; }

/// Channel planes addressed as base + c * channel_stride.
struct PlaneStack {
  std::size_t channels, H, W, channel_stride, offset;
};

inline PlaneStack planes_of(const Shape& s, std::optional<std::size_t> t) {
  if (t) {
    if (s.size() != 4 || *t >= s[1]) {
      throw ShapeError(detail::concat("roi_align: time index ", *t, " on map ", shape_str(s)));
    }
    return {s[0], s[2], s[3], s[1] * s[2] * s[3], *t * s[2] * s[3]};
  }
  if (s.size() != 3) throw ShapeError("roi_align: expected [d x H x W] map, got " + shape_str(s));
  return {s[0], s[1], s[2], s[1] * s[2], 0};
}

inline bool degenerate(const Box& scaled) { return !(scaled.width() > 0.0 && scaled.height() > 0.0); }

inline void forward(const double* base, const PlaneStack& ps, const std::vector<std::vector<Tap>>& taps,
                    double* out) {
  const std::size_t bins = taps.size();
  for (std::size_t c = 0; c < ps.channels; ++c) {
    const double* plane = base + ps.offset + c * ps.channel_stride;
    for (std::size_t b = 0; b < bins; ++b) {
      double acc = 0.0;
      for (const auto& tap : taps[b]) acc += tap.weight * plane[tap.index];
#ifdef STHOI_FAULT_INJECT_ROIALIGN
      // Negative-control build: shifts every bin by a constant.
      acc += 1e-3;
#endif
      out[c * bins + b] = acc;
    }
  }
}

inline void backward(double* grad_base, const PlaneStack& ps, const std::vector<std::vector<Tap>>& taps,
                     const double* grad_out, double scale = 1.0) {
  const std::size_t bins = taps.size();
  for (std::size_t c = 0; c < ps.channels; ++c) {
    double* plane = grad_base + ps.offset + c * ps.channel_stride;
    for (std::size_t b = 0; b < bins; ++b) {
      const double g = grad_out[c * bins + b] * scale;
      if (g == 0.0) continue;
      for (const auto& tap : taps[b]) plane[tap.index] += tap.weight * g;
    }
  }
}

inline void validate_cfg(const RoiAlignConfig& cfg) {
  if (cfg.out_h == 0 || cfg.out_w == 0 || cfg.samples_per_bin == 0) {
    throw InputError("roi_align: output size and samples_per_bin must be positive");
  }
}

}  // namespace roi

/// Differentiable RoIAlign of `map` ([d x H x W], or [d x T x H x W] at time `t`).
/// `box` is in frame coordinates and is scaled by `spatial_scale`.
inline ag::Var roi_align(const ag::Var& map, const Box& box, double spatial_scale,
                         const RoiAlignConfig& cfg, std::optional<std::size_t> t = std::nullopt) {
  roi::validate_cfg(cfg);
  const auto ps = roi::planes_of(map.shape(), t);
  const Box scaled = roi::scale_box(box, spatial_scale);
  Tensor out(Shape{ps.channels, cfg.out_h, cfg.out_w});
  if (roi::degenerate(scaled)) {
    log::warn("roi_align: degenerate box, emitting zeros");
    return ag::detail::make_result(std::move(out), {map}, [](ag::Node&) {});
  }
  auto taps = roi::bin_taps(scaled, ps.H, ps.W, cfg);
  roi::forward(map.value().ptr(), ps, taps, out.ptr());
  return ag::detail::make_result(std::move(out), {map}, [ps, taps = std::move(taps)](ag::Node& self) {
    auto& p = self.parents[0];
    Tensor g(p->value.shape());
    roi::backward(g.ptr(), ps, taps, self.grad.ptr());
    p->accumulate(g);
  });
}

/// Tube-of-interest pooling: per-frame RoIAlign along the trajectory, then the
/// temporal mean (1/T) * sum_t RoIAlign(v_t, box_t).
inline ag::Var toi_pool(const ag::Var& map, const Trajectory& traj, double spatial_scale,
                        const RoiAlignConfig& cfg) {
  roi::validate_cfg(cfg);
  const auto& s = map.shape();
  if (s.size() != 4) throw ShapeError("toi_pool: expected [d x T x H x W] map, got " + shape_str(s));
  const std::size_t T = s[1];
  if (traj.length() != T) {
    throw ShapeError(detail::concat("toi_pool: trajectory length ", traj.length(),
                                    " does not match map length ", T));
  }
  if (!traj.all_valid()) throw InputError("toi_pool: trajectory must be filled before pooling");
  const double inv_t = 1.0 / static_cast<double>(T);
  Tensor out(Shape{s[0], cfg.out_h, cfg.out_w});
  Tensor frame(out.shape());
  std::vector<std::vector<std::vector<roi::Tap>>> all_taps(T);
  std::vector<roi::PlaneStack> stacks(T);
  for (std::size_t t = 0; t < T; ++t) {
    stacks[t] = roi::planes_of(s, t);
    const Box scaled = roi::scale_box(traj.boxes[t], spatial_scale);
    if (roi::degenerate(scaled)) {
      log::warn("toi_pool: degenerate box at frame " + std::to_string(t));
      continue;
    }
    all_taps[t] = roi::bin_taps(scaled, stacks[t].H, stacks[t].W, cfg);
    roi::forward(map.value().ptr(), stacks[t], all_taps[t], frame.ptr());
    out += frame;
  }
  out *= inv_t;
  return ag::detail::make_result(
      std::move(out), {map}, [stacks, all_taps = std::move(all_taps), inv_t](ag::Node& self) {
        auto& p = self.parents[0];
        Tensor g(p->value.shape());
        for (std::size_t t = 0; t < stacks.size(); ++t) {
          if (all_taps[t].empty()) continue;
          roi::backward(g.ptr(), stacks[t], all_taps[t], self.grad.ptr(), inv_t);
        }
        p->accumulate(g);
      });
}

/// Conventional order: temporal mean of the whole map first, then RoIAlign at
/// the keyframe box. Misplaces moving instances.
inline ag::Var naive_temporal_roi_pool(const ag::Var& map, const Box& keyframe_box,
                                       double spatial_scale, const RoiAlignConfig& cfg) {
  if (map.shape().size() != 4) {
    throw ShapeError("naive_temporal_roi_pool: expected [d x T x H x W] map, got " +
                     shape_str(map.shape()));
  }
  return roi_align(ag::mean_pool(map, {1}), keyframe_box, spatial_scale, cfg);
}

// Value-level conveniences over FeatureMap.

inline PooledFeature roi_align(const FeatureMap& map, std::size_t t, const Box& box,
                               const RoiAlignConfig& cfg) {
  return {roi_align(ag::constant(map.tensor), box, map.spatial_scale, cfg, t).value()};
}

inline PooledFeature toi_pool(const FeatureMap& map, const Trajectory& traj, const RoiAlignConfig& cfg) {
  return {toi_pool(ag::constant(map.tensor), traj, map.spatial_scale, cfg).value()};
}

inline PooledFeature naive_temporal_roi_pool(const FeatureMap& map, const Box& keyframe_box,
                                             const RoiAlignConfig& cfg) {
  return {naive_temporal_roi_pool(ag::constant(map.tensor), keyframe_box, map.spatial_scale, cfg)
              .value()};
}

/// Area-style bilinear downsampling of a [C x H x W] tensor: each output cell is
/// the RoIAlign bin mean over the whole frame, with ceil(H/out) samples per bin.
inline Tensor downsample_bilinear(const Tensor& planes, std::size_t out_h, std::size_t out_w) {
  if (planes.rank() != 3) throw ShapeError("downsample: expected [C x H x W], got " + shape_str(planes.shape()));
  const std::size_t H = planes.dim(1), W = planes.dim(2);
  const std::size_t S = std::max<std::size_t>(
      1, std::max((H + out_h - 1) / out_h, (W + out_w - 1) / out_w));
  const RoiAlignConfig cfg{out_h, out_w, S};
  const Box whole{0.0, 0.0, static_cast<double>(W), static_cast<double>(H)};
  const auto taps = roi::bin_taps(whole, H, W, cfg);
  Tensor out(Shape{planes.dim(0), out_h, out_w});
  const roi::PlaneStack ps{planes.dim(0), H, W, H * W, 0};
  for (std::size_t c = 0; c < ps.channels; ++c) {
    const double* plane = planes.ptr() + c * H * W;
    for (std::size_t b = 0; b < taps.size(); ++b) {
      double acc = 0.0;
      for (const auto& tap : taps[b]) acc += tap.weight * plane[tap.index];
      out[c * taps.size() + b] = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatial masks and skeletons
// ---------------------------------------------------------------------------

/// Writes `value` along a 1-pixel Bresenham line between two pixels (inclusive).
inline void draw_line(Tensor& mask, std::size_t channel, long x0, long y0, long x1, long y1,
                      double value) {
  const long H = static_cast<long>(mask.dim(1)), W = static_cast<long>(mask.dim(2));
  const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  while (true) {
    if (x0 >= 0 && x0 < W && y0 >= 0 && y0 < H) {
      mask[(channel * static_cast<std::size_t>(H) + static_cast<std::size_t>(y0)) *
               static_cast<std::size_t>(W) +
           static_cast<std::size_t>(x0)] = value;
    }
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

/// Skeleton mask [1 x H x W]: each edge with both joints valid is drawn with its
/// table value; later edges overwrite earlier ones.
inline Tensor rasterize_skeleton(const Pose& pose, std::size_t H, std::size_t W,
                                 const SkeletonEdgeTable& table) {
  if (H == 0 || W == 0) throw InputError("rasterize_skeleton: H and W must be positive");
  Tensor mask(Shape{1, H, W});
  auto pixel = [&](std::size_t j) {
    const long x = std::clamp(static_cast<long>(std::floor(pose.keypoints[j][0])), 0L,
                              static_cast<long>(W) - 1);
    const long y = std::clamp(static_cast<long>(std::floor(pose.keypoints[j][1])), 0L,
                              static_cast<long>(H) - 1);
    return std::pair{x, y};
  };
  for (const auto& e : table.edges) {
    if (!pose.valid[e.joint_a] || !pose.valid[e.joint_b]) continue;
    const auto [xa, ya] = pixel(e.joint_a);
    const auto [xb, yb] = pixel(e.joint_b);
    draw_line(mask, 0, xa, ya, xb, yb, e.value);
  }
  return mask;
}

/// Channel 0: human box, channel 1: object box. A pixel is inside when its
/// centre lies in [x1,x2) x [y1,y2).
inline Tensor pair_spatial_masks(const Box& hbox, const Box& obox, std::size_t H, std::size_t W) {
  Tensor m(Shape{2, H, W});
  const Box boxes[2] = {hbox, obox};
  for (std::size_t c = 0; c < 2; ++c) {
    const Box& b = boxes[c];
    for (std::size_t y = 0; y < H; ++y) {
      const double cy = static_cast<double>(y) + 0.5;
      if (cy < b.y1 || cy >= b.y2) continue;
      for (std::size_t x = 0; x < W; ++x) {
        const double cx = static_cast<double>(x) + 0.5;
        if (cx >= b.x1 && cx < b.x2) m[(c * H + y) * W + x] = 1.0;
      }
    }
  }
  return m;
}

struct PoseFeatureConfig {
  std::size_t mask_size = 64;
  std::size_t channels1 = 16;
  std::size_t channels2 = 32;
  SkeletonEdgeTable table = SkeletonEdgeTable::coco17();
};

/// Per-pair input volume [3 x T x m x m]: human mask, object mask, skeleton,
/// each frame built at full resolution and then downsampled. A missing pose at a
/// frame gives an all-zero skeleton.
inline Tensor pose_input_volume(const std::vector<std::optional<Pose>>& poses, const Trajectory& human,
                                const Trajectory& object, std::size_t frame_w, std::size_t frame_h,
                                const PoseFeatureConfig& cfg) {
  const std::size_t T = human.length();
  if (object.length() != T) throw ShapeError("pose feature: trajectory lengths differ");
  if (!poses.empty() && poses.size() != T) {
    throw ShapeError(detail::concat("pose feature: ", poses.size(), " poses for ", T, " frames"));
  }
  const std::size_t m = cfg.mask_size;
  Tensor vol(Shape{3, T, m, m});
  Tensor frame(Shape{3, frame_h, frame_w});
  for (std::size_t t = 0; t < T; ++t) {
    frame.fill(0.0);
    const Tensor masks = pair_spatial_masks(human.boxes[t], object.boxes[t], frame_h, frame_w);
    std::copy(masks.data().begin(), masks.data().end(), frame.ptr());
    if (!poses.empty() && poses[t]) {
      const Tensor skel = rasterize_skeleton(*poses[t], frame_h, frame_w, cfg.table);
      std::copy(skel.data().begin(), skel.data().end(), frame.ptr() + 2 * frame_h * frame_w);
    }
    const Tensor small = downsample_bilinear(frame, m, m);
    for (std::size_t c = 0; c < 3; ++c) {
      std::copy_n(small.ptr() + c * m * m, m * m, vol.ptr() + (c * T + t) * m * m);
    }
  }
  return vol;
}

/// Two conv3d+relu layers (3->c1->c2, 3x3x3, stride 1, pad 1) and a global
/// spatio-temporal mean, giving a c2-vector.
class PoseEncoder {
 public:
  PoseEncoder(const PoseFeatureConfig& cfg, std::mt19937_64& rng)
      : conv1_w("pose.conv1.weight",
                kaiming_uniform({cfg.channels1, 3, 3, 3, 3}, 3 * 27, rng)),
        conv1_b("pose.conv1.bias", Tensor::zeros({cfg.channels1})),
        conv2_w("pose.conv2.weight",
                kaiming_uniform({cfg.channels2, cfg.channels1, 3, 3, 3}, cfg.channels1 * 27, rng)),
        conv2_b("pose.conv2.bias", Tensor::zeros({cfg.channels2})) {}

  ag::Var encode(const ag::Var& volume) const {
    constexpr kernels::Triple one{1, 1, 1};
    auto h = ag::relu(ag::conv3d(volume, conv1_w.var, conv1_b.var, one, one));
    h = ag::relu(ag::conv3d(h, conv2_w.var, conv2_b.var, one, one));
    return ag::mean_pool(h, {1, 2, 3});
  }

  std::vector<Parameter*> parameters() { return {&conv1_w, &conv1_b, &conv2_w, &conv2_b}; }
  std::size_t output_size() const { return conv2_b.value().size(); }

  Parameter conv1_w, conv1_b, conv2_w, conv2_b;
};

/// Spatial-temporal masking pose feature for one pair.
inline ag::Var masking_pose_feature(const PoseEncoder& encoder,
                                    const std::vector<std::optional<Pose>>& human_poses,
                                    const Trajectory& human, const Trajectory& object,
                                    std::size_t frame_w, std::size_t frame_h,
                                    const PoseFeatureConfig& cfg) {
  return encoder.encode(
      ag::constant(pose_input_volume(human_poses, human, object, frame_w, frame_h, cfg)));
}

}  // namespace sthoi
