#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "sthoi/sample.hpp"

namespace sthoi {

struct AugmentConfig {
  std::size_t short_min = 64;  // training: shorter side drawn uniformly from [short_min, short_max]
  std::size_t short_max = 80;
  std::size_t crop = 64;       // square training crop
  double flip_p = 0.5;
  int max_crop_tries = 10;
  std::size_t test_short = 64;  // inference: shorter side only

  void validate() const {
    if (short_min == 0 || short_max < short_min) throw InputError("augment: need 0 < short_min <= short_max");
    if (crop == 0 || crop > short_min) throw InputError("augment: crop must be in (0, short_min]");
    if (!(flip_p >= 0.0 && flip_p <= 1.0)) throw InputError("augment: flip_p must be in [0,1]");
    if (max_crop_tries < 1) throw InputError("augment: max_crop_tries must be >= 1");
    if (test_short == 0) throw InputError("augment: test_short must be positive");
  }
};

/// Bilinear resize of [C x T x H x W] frames with half-pixel centres and edge clamping.
inline Tensor resize_frames(const Tensor& f, std::size_t nh, std::size_t nw) {
  const std::size_t C = f.dim(0), T = f.dim(1), H = f.dim(2), W = f.dim(3);
  if (nh == H && nw == W) return f;
  Tensor out(Shape{C, T, nh, nw});
  const double sy = static_cast<double>(H) / static_cast<double>(nh);
  const double sx = static_cast<double>(W) / static_cast<double>(nw);
  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [](std::size_t n_out, std::size_t n_in, double s) {
    std::vector<Tap> v(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double p = std::clamp((static_cast<double>(o) + 0.5) * s - 0.5, 0.0, static_cast<double>(n_in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(p));
      v[o] = {i0, std::min(i0 + 1, n_in - 1), p - static_cast<double>(i0)};
    }
    return v;
  };
  const auto ty = taps(nh, H, sy), tx = taps(nw, W, sx);
  for (std::size_t p = 0; p < C * T; ++p) {
    const double* src = f.ptr() + p * H * W;
    double* dst = out.ptr() + p * nh * nw;
    for (std::size_t y = 0; y < nh; ++y) {
      const double* r0 = src + ty[y].i0 * W;
      const double* r1 = src + ty[y].i1 * W;
      for (std::size_t x = 0; x < nw; ++x) {
        const auto& t = tx[x];
        const double a = r0[t.i0] + t.w1 * (r0[t.i1] - r0[t.i0]);
        const double b = r1[t.i0] + t.w1 * (r1[t.i1] - r1[t.i0]);
        dst[y * nw + x] = a + ty[y].w1 * (b - a);
      }
    }
  }
  return out;
}

/// Scale, optional horizontal flip, then crop window [ox, ox+out_w) x [oy, oy+out_h).
struct GeomTransform {
  double sx = 1.0, sy = 1.0;
  std::size_t scaled_w = 0, scaled_h = 0;
  bool flip = false;
  std::size_t ox = 0, oy = 0, out_w = 0, out_h = 0;

  double map_x(double x) const {
    double v = x * sx;
    if (flip) v = static_cast<double>(scaled_w) - v;
    return v - static_cast<double>(ox);
  }
  double map_y(double y) const { return y * sy - static_cast<double>(oy); }

  /// Transformed box clipped to the output; nullopt when nothing remains.
  std::optional<Box> map_box(const Box& b) const {
    double x1 = map_x(b.x1), x2 = map_x(b.x2);
    if (x1 > x2) std::swap(x1, x2);
    const Box r = clip_box(Box{x1, map_y(b.y1), x2, map_y(b.y2)}, static_cast<double>(out_w),
                           static_cast<double>(out_h));
    if (!(r.area() > 0.0)) return std::nullopt;
    return r;
  }
};

// Left/right joint pairs of the 17-joint layout, swapped under a mirror.
inline constexpr std::array<std::pair<int, int>, 8> kMirrorJoints = {
    {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}}};

inline Pose map_pose(const Pose& p, const GeomTransform& g) {
  Pose out = p;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    if (!p.valid[j]) continue;
    const double x = g.map_x(p.keypoints[j][0]), y = g.map_y(p.keypoints[j][1]);
    out.keypoints[j] = {x, y};
    out.valid[j] = x >= 0 && y >= 0 && x <= static_cast<double>(g.out_w) && y <= static_cast<double>(g.out_h);
  }
  if (g.flip) {
    for (auto [a, b] : kMirrorJoints) {
      std::swap(out.keypoints[static_cast<std::size_t>(a)], out.keypoints[static_cast<std::size_t>(b)]);
      std::swap(out.valid[static_cast<std::size_t>(a)], out.valid[static_cast<std::size_t>(b)]);
    }
  }
  return out;
}

/// True when every box present at the keyframe survives the crop.
inline bool keeps_keyframe_boxes(const KeyframeSample& s, const GeomTransform& g) {
  for (const auto& t : s.trajectories) {
    if (t.valid[s.center] && !g.map_box(t.boxes[s.center])) return false;
  }
  return true;
}

/// Applies `g` to frames, trajectories and poses. Labels are untouched.
inline KeyframeSample apply_transform(const KeyframeSample& s, const GeomTransform& g) {
  KeyframeSample out = s;
  Tensor f = resize_frames(s.frames, g.scaled_h, g.scaled_w);
  const std::size_t C = f.dim(0), T = f.dim(1), H = f.dim(2), W = f.dim(3);
  if (g.flip || g.out_w != W || g.out_h != H || g.ox != 0 || g.oy != 0) {
    Tensor c(Shape{C, T, g.out_h, g.out_w});
    for (std::size_t p = 0; p < C * T; ++p) {
      for (std::size_t y = 0; y < g.out_h; ++y) {
        const double* row = f.ptr() + (p * H + y + g.oy) * W;
        double* dst = c.ptr() + (p * g.out_h + y) * g.out_w;
        for (std::size_t x = 0; x < g.out_w; ++x) {
          const std::size_t sx = x + g.ox;
          dst[x] = row[g.flip ? W - 1 - sx : sx];
        }
      }
    }
    f = std::move(c);
  }
  out.frames = std::move(f);
  for (std::size_t i = 0; i < out.trajectories.size(); ++i) {
    auto& t = out.trajectories[i];
    for (std::size_t k = 0; k < t.length(); ++k) {
      if (!t.valid[k]) continue;
      const auto b = g.map_box(t.boxes[k]);
      t.valid[k] = b.has_value();
      t.boxes[k] = b.value_or(Box{});
    }
    if (i < out.poses.size()) {
      for (auto& p : out.poses[i]) {
        if (p) p = map_pose(*p, g);
      }
    }
  }
  return out;
}

inline GeomTransform scale_transform(std::size_t h, std::size_t w, std::size_t target_short) {
  GeomTransform g;
  const double s = static_cast<double>(target_short) / static_cast<double>(std::min(h, w));
  g.scaled_h = h <= w ? target_short : static_cast<std::size_t>(std::lround(static_cast<double>(h) * s));
  g.scaled_w = w <= h ? target_short : static_cast<std::size_t>(std::lround(static_cast<double>(w) * s));
  g.sx = static_cast<double>(g.scaled_w) / static_cast<double>(w);
  g.sy = static_cast<double>(g.scaled_h) / static_cast<double>(h);
  g.out_w = g.scaled_w;
  g.out_h = g.scaled_h;
  return g;
}

/// Training augmentation: random shorter-side scale, flip, random square crop.
/// A crop that loses any keyframe box is redrawn; after max_crop_tries the
/// centre crop is used, and if that also loses a box the frame is resized
/// straight to the crop size instead.
inline KeyframeSample augment(const KeyframeSample& s, std::mt19937_64& rng, const AugmentConfig& cfg) {
  cfg.validate();
  std::uniform_int_distribution<std::size_t> short_side(cfg.short_min, cfg.short_max);
  GeomTransform g = scale_transform(s.height(), s.width(), short_side(rng));
  g.flip = std::bernoulli_distribution(cfg.flip_p)(rng);
  g.out_w = g.out_h = cfg.crop;
  std::uniform_int_distribution<std::size_t> dx(0, g.scaled_w - cfg.crop), dy(0, g.scaled_h - cfg.crop);
  bool ok = false;
  for (int k = 0; k < cfg.max_crop_tries && !ok; ++k) {
    g.ox = dx(rng);
    g.oy = dy(rng);
    ok = keeps_keyframe_boxes(s, g);
  }
  if (!ok) {
    g.ox = (g.scaled_w - cfg.crop) / 2;
    g.oy = (g.scaled_h - cfg.crop) / 2;
    ok = keeps_keyframe_boxes(s, g);
  }
  if (!ok) {
    const bool flip = g.flip;
    g = GeomTransform{};
    g.scaled_w = g.scaled_h = g.out_w = g.out_h = cfg.crop;
    g.sx = static_cast<double>(cfg.crop) / static_cast<double>(s.width());
    g.sy = static_cast<double>(cfg.crop) / static_cast<double>(s.height());
    g.flip = flip;
  }
  return apply_transform(s, g);
}

/// Inference path: resize the shorter side only.
inline KeyframeSample inference_resize(const KeyframeSample& s, const AugmentConfig& cfg) {
  return apply_transform(s, scale_transform(s.height(), s.width(), cfg.test_short));
}

}  // namespace sthoi
