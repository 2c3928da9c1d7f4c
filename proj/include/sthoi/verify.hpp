#pragma once

#include <chrono>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sthoi/eval.hpp"
#include "sthoi/features.hpp"
#include "sthoi/nn.hpp"
#include "sthoi/oracle/reference.hpp"
#include "sthoi/synthetic.hpp"

namespace sthoi::verify {

struct SuiteResult {
  std::string name;
  std::size_t passed = 0;
  std::size_t total = 0;
  double worst = 0.0;  // largest observed error, or smallest margin, depending on the suite
  std::string detail;  // first failure
  double seconds = 0.0;

  explicit SuiteResult(std::string n = {}) : name(std::move(n)) {}

  bool ok() const { return total > 0 && passed == total; }

  void record(bool pass, const std::string& what) {
    ++total;
    if (pass) {
      ++passed;
    } else if (detail.empty()) {
      detail = what;
    }
  }
};

namespace util {

inline Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

/// Values in +-[0.1, 1], keeping relu and sign-sensitive ops away from their kinks.
inline Tensor off_zero(const Shape& s, std::mt19937_64& rng) {
  Tensor t = random_tensor(s, rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.data()) {
    if (flip(rng)) v = -v;
  }
  return t;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Box random_box(std::mt19937_64& rng, double W, double H, double min_size = 0.5) {
  std::uniform_real_distribution<double> ux(-0.25 * W, W), uy(-0.25 * H, H);
  std::uniform_real_distribution<double> sw(min_size, 0.8 * W), sh(min_size, 0.8 * H);
  const double x = ux(rng), y = uy(rng);
  return Box{x, y, x + sw(rng), y + sh(rng)};
}

template <class F>
double timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace util

/// Central finite-difference check of every differentiable op on randomized
/// shapes, one round per seed.
inline SuiteResult gradient_suite(const std::vector<std::uint64_t>& seeds = {1, 2, 3, 4, 5}, double tol = 1e-4) {
  using util::off_zero;
  using util::pick;
  using util::random_tensor;
  SuiteResult r("gradients");
  r.seconds = util::timed([&] {
    for (auto seed : seeds) {
      std::mt19937_64 rng(seed);
      auto check = [&](const std::string& op, const std::function<ag::Var(const ag::Var&)>& f, const Tensor& x) {
        const auto g = grad_check(f, x, 1e-6, seed);
        r.worst = std::max(r.worst, g.max_rel_error);
        std::ostringstream os;
        os << op << " (seed " << seed << "): relative error " << g.max_rel_error << " at " << g.worst_index;
        r.record(g.max_rel_error < tol, os.str());
      };
      const kernels::Triple one{1, 1, 1};
      {
        const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
        const Shape in{cin, pick(rng, 2, 4), pick(rng, 3, 5), pick(rng, 3, 5)};
        const Shape ks{cout, cin, 3, 3, 3};
        const Tensor x = random_tensor(in, rng), k = random_tensor(ks, rng), b = random_tensor({cout}, rng);
        const kernels::Triple stride{1, pick(rng, 1, 2), 1};
        auto conv = [&](const ag::Var& xi, const ag::Var& ki, const ag::Var& bi) {
          const Shape& s = xi.shape();
          // Only strides that tile the padded input exactly are legal.
          const kernels::Triple st{1, (s[2] + 2 - 3) % stride[1] == 0 ? stride[1] : 1, 1};
          return ag::conv3d(xi, ki, bi, st, one);
        };
        check("conv3d/input", [&](const ag::Var& v) { return conv(v, ag::constant(k), ag::constant(b)); }, x);
        check("conv3d/kernel", [&](const ag::Var& v) { return conv(ag::constant(x), v, ag::constant(b)); }, k);
        check("conv3d/bias", [&](const ag::Var& v) { return conv(ag::constant(x), ag::constant(k), v); }, b);
      }
      {
        const std::size_t cin = pick(rng, 1, 2);
        const Shape in{cin, pick(rng, 1, 3), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)};
        const Tensor k = random_tensor({2, cin, 3, 4, 4}, rng), b = random_tensor({2}, rng);
        check("conv3d/strided", [&](const ag::Var& v) {
          return ag::conv3d(v, ag::constant(k), ag::constant(b), {1, 2, 2}, one);
        }, random_tensor(in, rng));
      }
      {
        const std::size_t n = pick(rng, 1, 4), fin = pick(rng, 1, 6), fout = pick(rng, 1, 5);
        const Tensor x = random_tensor({n, fin}, rng), w = random_tensor({fout, fin}, rng),
                     b = random_tensor({fout}, rng);
        check("linear/input", [&](const ag::Var& v) { return ag::linear(v, ag::constant(w), ag::constant(b)); }, x);
        check("linear/weight", [&](const ag::Var& v) { return ag::linear(ag::constant(x), v, ag::constant(b)); }, w);
        check("linear/bias", [&](const ag::Var& v) { return ag::linear(ag::constant(x), ag::constant(w), v); }, b);
      }
      const Shape s4{pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 2, 5), pick(rng, 2, 5)};
      check("relu", [](const ag::Var& v) { return ag::relu(v); }, off_zero(s4, rng));
      check("sigmoid", [](const ag::Var& v) { return ag::sigmoid(v); }, random_tensor(s4, rng, -4, 4));
      check("mean_pool/time", [](const ag::Var& v) { return ag::mean_pool(v, {1}); }, random_tensor(s4, rng));
      check("mean_pool/space-time", [](const ag::Var& v) { return ag::mean_pool(v, {1, 2, 3}); },
            random_tensor(s4, rng));
      check("reshape", [](const ag::Var& v) { return ag::flatten(v); }, random_tensor(s4, rng));
      check("time_slice", [&](const ag::Var& v) { return ag::time_slice(v, s4[1] - 1); }, random_tensor(s4, rng));
      {
        const Tensor other = random_tensor(s4, rng);
        check("add", [&](const ag::Var& v) { return ag::add(v, ag::constant(other)); }, random_tensor(s4, rng));
        check("scale", [](const ag::Var& v) { return ag::scale(v, -1.7); }, random_tensor(s4, rng));
      }
      {
        const Tensor a = random_tensor({pick(rng, 1, 4)}, rng);
        check("concat", [&](const ag::Var& v) { return ag::concat({ag::constant(a), v, v}); },
              random_tensor({pick(rng, 1, 5)}, rng));
        const std::size_t len = pick(rng, 1, 4);
        const Tensor row = random_tensor({len}, rng);
        check("stack_rows", [&](const ag::Var& v) { return ag::stack_rows({v, ag::constant(row), v}); },
              random_tensor({len}, rng));
      }
      {
        const std::size_t n = pick(rng, 1, 4), c = pick(rng, 1, 4);
        Tensor y({n, c});
        std::bernoulli_distribution coin(0.5);
        for (auto& v : y.data()) v = coin(rng) ? 1.0 : 0.0;
        check("bce", [&](const ag::Var& v) { return ag::bce_multilabel(v, y); }, random_tensor({n, c}, rng, -5, 5));
      }
      {
        const std::size_t H = pick(rng, 3, 8), W = pick(rng, 3, 8), T = pick(rng, 2, 4);
        const RoiAlignConfig cfg{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
        const double scale = 0.5;
        const Box box = util::random_box(rng, W / scale, H / scale, 1.0);
        check("roi_align", [&](const ag::Var& v) { return roi_align(v, box, scale, cfg); },
              random_tensor({2, H, W}, rng));
        Trajectory traj;
        for (std::size_t t = 0; t < T; ++t) {
          traj.boxes.push_back(util::random_box(rng, W / scale, H / scale, 1.0));
          traj.valid.push_back(true);
        }
        check("toi_pool", [&](const ag::Var& v) { return toi_pool(v, traj, scale, cfg); },
              random_tensor({2, T, H, W}, rng));
        check("naive_temporal_roi_pool",
              [&](const ag::Var& v) { return naive_temporal_roi_pool(v, traj.boxes[0], scale, cfg); },
              random_tensor({2, T, H, W}, rng));
      }
    }
  });
  return r;
}

/// roi_align against direct per-sample bilinear interpolation.
inline SuiteResult roialign_suite(std::size_t cases = 1000, std::uint64_t seed = 11, double tol = 1e-9) {
  SuiteResult r("roialign");
  r.seconds = util::timed([&] {
    std::mt19937_64 rng(seed);
    const double scales[] = {1.0, 0.5, 0.25};
    for (std::size_t k = 0; k < cases; ++k) {
      const std::size_t C = util::pick(rng, 1, 3), H = util::pick(rng, 1, 12), W = util::pick(rng, 1, 12);
      const double scale = scales[util::pick(rng, 0, 2)];
      const RoiAlignConfig cfg{util::pick(rng, 1, 4), util::pick(rng, 1, 4), util::pick(rng, 1, 3)};
      const Tensor map = util::random_tensor({C, H, W}, rng);
      const Box box = util::random_box(rng, W / scale, H / scale, 0.1);
      const Tensor got = roi_align(ag::constant(map), box, scale, cfg).value();
      const Tensor want = oracle::roi_align(map, box, scale, cfg.out_h, cfg.out_w, cfg.samples_per_bin);
      const double err = max_abs_diff(got, want);
      r.worst = std::max(r.worst, err);
      r.record(err < tol, detail::concat("case ", k, ": max abs error ", err));
    }
  });
  return r;
}

/// One moving square per frame and a trajectory that follows it exactly.
struct DivergenceWitness {
  Tensor map;  // [1 x T x 4 x 4T]
  Trajectory trajectory;
  std::size_t keyframe = 0;
};

inline DivergenceWitness divergence_witness(std::size_t T = 8) {
  DivergenceWitness w;
  w.map = Tensor(Shape{1, T, 4, 4 * T});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t x = 4 * t; x < 4 * t + 4; ++x) w.map.at(0, t, y, x) = 1.0;
    }
    w.trajectory.boxes.push_back(Box{4.0 * t, 0.0, 4.0 * t + 4.0, 4.0});
    w.trajectory.valid.push_back(true);
  }
  w.keyframe = T / 2;
  return w;
}

/// Static trajectories: both pooling orders agree. Moving witness: they do not.
inline SuiteResult pooling_suite(std::size_t static_cases = 200, std::uint64_t seed = 21, double tol = 1e-9) {
  SuiteResult r("pooling");
  r.seconds = util::timed([&] {
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < static_cases; ++k) {
      const std::size_t C = util::pick(rng, 1, 3), T = util::pick(rng, 1, 8);
      const std::size_t H = util::pick(rng, 2, 10), W = util::pick(rng, 2, 10);
      const double scale = util::pick(rng, 0, 1) ? 0.25 : 1.0;
      const RoiAlignConfig cfg{util::pick(rng, 1, 4), util::pick(rng, 1, 4), util::pick(rng, 1, 3)};
      const Tensor map = util::random_tensor({C, T, H, W}, rng);
      const Box box = util::random_box(rng, W / scale, H / scale, 0.5);
      Trajectory traj;
      traj.boxes.assign(T, box);
      traj.valid.assign(T, true);
      const auto a = toi_pool(ag::constant(map), traj, scale, cfg).value();
      const auto b = naive_temporal_roi_pool(ag::constant(map), box, scale, cfg).value();
      // The moving-box case must go through the oracle too, so a broken
      // roi_align cannot pass by being consistently wrong in both orders.
      Tensor ref(a.shape());
      for (std::size_t t = 0; t < T; ++t) {
        ref += oracle::roi_align(oracle::frame_of(map, t), box, scale, cfg.out_h, cfg.out_w, cfg.samples_per_bin);
      }
      ref *= 1.0 / static_cast<double>(T);
      const double err = std::max(max_abs_diff(a, b), max_abs_diff(a, ref));
      r.worst = std::max(r.worst, err);
      r.record(err < tol, detail::concat("static case ", k, ": difference ", err));
    }
    const auto w = divergence_witness();
    const RoiAlignConfig cfg{2, 2, 2};
    const auto toi = toi_pool(ag::constant(w.map), w.trajectory, 1.0, cfg).value();
    const auto naive =
        naive_temporal_roi_pool(ag::constant(w.map), w.trajectory.boxes[w.keyframe], 1.0, cfg).value();
    double min_rel = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < toi.size(); ++i) {
      const double d = std::abs(toi[i] - naive[i]) / std::max({std::abs(toi[i]), std::abs(naive[i]), 1e-12});
      min_rel = std::min(min_rel, d);
    }
    std::ostringstream os;
    os << "divergence witness: smallest elementwise relative difference " << min_rel;
    r.record(min_rel > 0.5, os.str());
  });
  return r;
}

/// evaluate() against the brute-force matcher and exact PR enumeration.
inline SuiteResult ap_suite(std::size_t scenarios = 300, std::uint64_t seed = 31, double tol = 1e-12) {
  SuiteResult r("ap-oracle");
  r.seconds = util::timed([&] {
    std::mt19937_64 rng(seed);
    auto close = [&](const std::optional<double>& a, const std::optional<double>& b) {
      if (a.has_value() != b.has_value()) return false;
      if (!a) return true;
      r.worst = std::max(r.worst, std::abs(*a - *b));
      return std::abs(*a - *b) <= tol;
    };
    for (std::size_t k = 0; k < scenarios; ++k) {
      const auto s = oracle::random_scenario(rng);
      const auto rep = evaluate(s.dets, s.gts, s.keyframes, s.taxonomy, rarity_split(s.taxonomy), EvalMode::kOracle);
      const auto want = oracle::evaluate(s.dets, s.gts, s.taxonomy.num_predicates(), s.train_counts);
      bool ok = close(rep.map_full, want.map_full) && close(rep.map_rare, want.map_rare) &&
                close(rep.map_nonrare, want.map_nonrare) && rep.triplets.size() == want.triplet_ap.size();
      for (const auto& t : rep.triplets) {
        auto it = want.triplet_ap.find({t.predicate, t.object_category});
        ok = ok && it != want.triplet_ap.end() && close(t.ap, it->second);
      }
      for (const auto& p : rep.predicates) ok = ok && close(p.ap, want.predicate_ap.at(p.predicate));
      r.record(ok, detail::concat("scenario ", k, " disagrees with the oracle"));
    }
  });
  return r;
}

/// Synthetic twins: reversed frames, swapped towards/away, other labels equal,
/// and every label reproduced from the emitted boxes.
inline SuiteResult twin_suite(std::uint64_t seed = 41) {
  SuiteResult r("synthetic-twins");
  r.seconds = util::timed([&] {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.num_train_videos = 16;
    spec.num_val_videos = 4;
    const auto ds = generate_synthetic(spec);
    auto labels = [](const VideoAnnotation& v) {
      std::multiset<std::pair<std::string, std::string>> out;
      for (const auto& rel : v.relations) out.insert({rel.object_id, rel.predicate});
      return out;
    };
    auto find = [&](const std::string& id) {
      const auto* v = ds.train.find(id);
      return v ? v : ds.val.find(id);
    };
    for (const auto& [fwd, rev] : ds.twins) {
      const auto* a = find(fwd);
      const auto* b = find(rev);
      const auto& fa = ds.frames.at(fwd);
      const auto& fb = ds.frames.at(rev);
      bool frames_ok = fa.frame_count == fb.frame_count;
      for (std::uint32_t f = 0; frames_ok && f < fa.frame_count; ++f) {
        const auto n = fa.frame_bytes();
        frames_ok = std::equal(fa.rgb.begin() + f * n, fa.rgb.begin() + (f + 1) * n,
                               fb.rgb.begin() + (fb.frame_count - 1 - f) * n);
      }
      r.record(frames_ok, "twin " + fwd + "/" + rev + ": frames are not time-reversed");
      auto swapped = labels(*a);
      std::multiset<std::pair<std::string, std::string>> expect;
      for (auto [o, p] : swapped) {
        if (p == "towards") p = "away";
        else if (p == "away") p = "towards";
        expect.insert({o, p});
      }
      r.record(expect == labels(*b), "twin " + fwd + "/" + rev + ": labels are not towards/away swaps");
    }
    for (const auto* split : {&ds.train, &ds.val}) {
      for (const auto& v : split->videos) {
        std::vector<Box> person;
        for (int f = 0; f < v.frame_count; ++f) person.push_back(*v.box_at(f, "person0"));
        for (const auto& inst : v.instances) {
          if (inst.category == kPersonName) continue;
          std::vector<Box> obj;
          for (int f = 0; f < v.frame_count; ++f) obj.push_back(*v.box_at(f, inst.instance_id));
          // Independent re-derivation of the motion labels from box centres.
          std::vector<double> d;
          for (int f = 0; f < v.frame_count; ++f) {
            d.push_back(std::hypot(person[f].cx() - obj[f].cx(), person[f].cy() - obj[f].cy()));
          }
          bool dec = true, inc = true;
          for (std::size_t f = 1; f < d.size(); ++f) {
            dec = dec && d[f] < d[f - 1];
            inc = inc && d[f] > d[f - 1];
          }
          bool has_towards = false, has_away = false;
          for (const auto& rel : v.relations) {
            if (rel.object_id != inst.instance_id) continue;
            has_towards |= rel.predicate == "towards";
            has_away |= rel.predicate == "away";
          }
          r.record(has_towards == dec && has_away == inc,
                   v.video_id + "/" + inst.instance_id + ": motion labels disagree with the boxes");
        }
      }
    }
  });
  return r;
}

inline std::vector<SuiteResult> run_all() {
  return {gradient_suite(), roialign_suite(), pooling_suite(), ap_suite(), twin_suite()};
}

}  // namespace sthoi::verify
