#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "sthoi/eval.hpp"
#include "sthoi/oracle/reference.hpp"
#include "sthoi/synthetic.hpp"
#include "sthoi/verify.hpp"

using namespace sthoi;

namespace {

GtInstance gt(const std::string& v, int kf, Box h, Box o, int cat, int pred) {
  return {v, kf, h, o, cat, pred, false};
}

Detection det(const GtInstance& g, double score) {
  return {g.video_id, g.keyframe_index, g.human_box, g.object_box, g.object_category, g.predicate_id, score};
}

Box shifted(const Box& b, double dx) { return {b.x1 + dx, b.y1, b.x2 + dx, b.y2}; }

std::vector<bool> random_flags(std::mt19937_64& rng, std::size_t n, std::size_t& n_tp) {
  std::vector<bool> f(n);
  n_tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f[i] = rng() % 2;
    n_tp += f[i];
  }
  return f;
}

Taxonomy two_by_two() {
  Taxonomy t;
  t.predicates = {{"move", true}, {"near", false}};
  t.object_categories = {"person", "ball", "cup"};
  t.triplets = {{0, 0, 1, 30}, {1, 1, 2, 24}, {2, 0, 2, 25}};
  return t;
}

}  // namespace

TEST(Match, Examples) {
  const auto g = gt("v", 0, {0, 0, 10, 10}, {20, 0, 30, 10}, 1, 0);
  {
    std::vector<GtInstance> gs{g};
    EXPECT_EQ(match_category({det(g, 0.9)}, gs), (std::vector<bool>{true}));
  }
  {
    std::vector<GtInstance> gs{g};
    EXPECT_EQ(match_category({det(g, 0.9), det(g, 0.8)}, gs), (std::vector<bool>{true, false}));
  }
  {
    // Human IoU 0.6, object IoU 0.4: the min rule rejects it.
    Detection d = det(g, 0.9);
    d.human_box = {0, 0, 10, 6};
    d.object_box = {20, 0, 30, 4};
    EXPECT_NEAR(iou(d.human_box, g.human_box), 0.6, 1e-12);
    EXPECT_NEAR(iou(d.object_box, g.object_box), 0.4, 1e-12);
    std::vector<GtInstance> gs{g};
    EXPECT_EQ(match_category({d}, gs), (std::vector<bool>{false}));
  }
  {
    // Exactly 0.5 is not enough.
    Detection d = det(g, 0.9);
    d.human_box = {0, 0, 10, 5};
    std::vector<GtInstance> gs{g};
    EXPECT_EQ(match_category({d}, gs), (std::vector<bool>{false}));
  }
}

TEST(AveragePrecision, Examples) {
  EXPECT_DOUBLE_EQ(*average_precision({true}, 1), 1.0);
  EXPECT_DOUBLE_EQ(*average_precision({false, true}, 1), 0.5);
  EXPECT_NEAR(*average_precision({true, false, true}, 2), 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(oracle::exact_ap({true, false, true}, 2)->to_double(), 5.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(*average_precision({}, 3), 0.0);
  EXPECT_FALSE(average_precision({false}, 0).has_value());
  EXPECT_THROW(average_precision({true, true}, 1), InputError);
}

TEST(AveragePrecisionProperty, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    std::size_t n_tp = 0;
    const auto f = random_flags(rng, rng() % 12, n_tp);
    const std::size_t n_gt = n_tp + rng() % 4;
    const auto a = average_precision(f, n_gt);
    const auto o = oracle::exact_ap(f, n_gt);
    ASSERT_EQ(a.has_value(), o.has_value());
    if (a) {
      EXPECT_NEAR(*a, o->to_double(), 1e-12);
    }
  }
}

TEST(AveragePrecisionProperty, TrailingFalsePositiveAndExtraTruePositive) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    std::size_t n_tp = 0;
    auto f = random_flags(rng, 1 + rng() % 10, n_tp);
    const std::size_t n_gt = n_tp + 1 + rng() % 3;
    const double base = *average_precision(f, n_gt);
    auto fp = f;
    fp.push_back(false);
    EXPECT_LE(*average_precision(fp, n_gt), base + 1e-15);
    auto tp = f;
    tp.insert(tp.begin() + static_cast<long>(rng() % (f.size() + 1)), true);
    EXPECT_GE(*average_precision(tp, n_gt), base - 1e-15);
  }
}

TEST(EvaluateProperty, MonotoneScoreTransformAndShuffleInvariance) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    auto s = oracle::random_scenario(rng);
    const auto rarity = rarity_split(s.taxonomy);
    const auto base = report_json(evaluate(s.dets, s.gts, s.keyframes, s.taxonomy, rarity, EvalMode::kOracle));
    auto squashed = s.dets;
    for (auto& d : squashed) d.score = std::pow(d.score, 3.0) * 0.5 + 0.1;
    EXPECT_EQ(report_json(evaluate(squashed, s.gts, s.keyframes, s.taxonomy, rarity, EvalMode::kOracle)), base);
    auto shuffled = s.dets;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(report_json(evaluate(shuffled, s.gts, s.keyframes, s.taxonomy, rarity, EvalMode::kOracle)), base);
  }
}

TEST(EvaluateProperty, HeadlineNumbersRecomputeFromTripletTable) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    auto s = oracle::random_scenario(rng);
    const auto r = evaluate(s.dets, s.gts, s.keyframes, s.taxonomy, rarity_split(s.taxonomy), EvalMode::kOracle);
    std::vector<std::optional<double>> all, rare, nonrare;
    for (const auto& t : r.triplets) {
      all.push_back(t.ap);
      (t.rare ? rare : nonrare).push_back(t.ap);
    }
    EXPECT_EQ(mean_defined(all), r.map_full);
    EXPECT_EQ(mean_defined(rare), r.map_rare);
    EXPECT_EQ(mean_defined(nonrare), r.map_nonrare);
  }
}

TEST(EvaluateProperty, AgreesWithReferenceOnRandomScenarios) {
  const auto r = verify::ap_suite(300, 31, 1e-12);
  EXPECT_TRUE(r.ok()) << r.detail;
  EXPECT_EQ(r.total, 300u);
}

TEST(MatcherProperty, GreedyAgreesWithReferenceAndNeverBeatsOptimum) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 300; ++i) {
    auto s = oracle::random_scenario(rng);
    for (int p = 0; p < 2; ++p)
      for (int c = 0; c < 3; ++c) {
        std::vector<Detection> d;
        std::vector<GtInstance> g;
        for (const auto& x : s.dets)
          if (x.predicate_id == p && x.object_category == c) d.push_back(x);
        for (const auto& x : s.gts)
          if (x.predicate_id == p && x.object_category == c) g.push_back(x);
        d = oracle::sorted(d);
        auto gc = g;
        canonical_sort(d);
        const auto ours = match_category(d, gc);
        const auto ref = oracle::greedy_tp(oracle::sorted(d), g);
        EXPECT_EQ(ours, ref);
        const auto n = static_cast<std::size_t>(std::count(ours.begin(), ours.end(), true));
        EXPECT_LE(n, oracle::max_matching(d, g));
      }
  }
}

TEST(Evaluate, GroundTruthEchoScoresOne) {
  const auto tax = two_by_two();
  const std::vector<KeyframeRef> kfs{{"a", 0}, {"a", 8}, {"b", 0}};
  std::vector<GtInstance> gts{gt("a", 0, {0, 0, 4, 4}, {5, 5, 9, 9}, 1, 0), gt("a", 8, {0, 0, 4, 4}, {5, 5, 9, 9}, 2, 1),
                              gt("b", 0, {1, 1, 4, 4}, {6, 5, 9, 9}, 2, 0)};
  const auto r = evaluate(gt_echo(gts), gts, kfs, tax, rarity_split(tax), EvalMode::kOracle);
  for (const auto& t : r.triplets) EXPECT_EQ(t.ap, 1.0);
  for (const auto& p : r.predicates) EXPECT_EQ(p.ap, 1.0);
  EXPECT_EQ(r.map_full, 1.0);
  EXPECT_EQ(r.map_rare, 1.0);
  EXPECT_EQ(r.map_nonrare, 1.0);
  EXPECT_EQ(r.map_temporal, 1.0);
  EXPECT_EQ(r.map_spatial, 1.0);
  const auto e = evaluate({}, gts, kfs, tax, rarity_split(tax), EvalMode::kOracle);
  for (const auto& t : e.triplets) EXPECT_EQ(t.ap, 0.0);
  EXPECT_EQ(e.map_full, 0.0);
}

TEST(Evaluate, HandScenarioMatchesReference) {
  // Three keyframes, triplet (move, ball) non-rare, (near, cup) rare.
  const auto tax = two_by_two();
  const std::vector<KeyframeRef> kfs{{"a", 0}, {"a", 8}, {"b", 0}};
  const Box h{0, 0, 10, 10}, o{20, 0, 30, 10};
  std::vector<GtInstance> gts{gt("a", 0, h, o, 1, 0), gt("a", 8, h, o, 1, 0), gt("b", 0, h, o, 2, 1),
                              gt("b", 0, h, shifted(o, 15), 2, 1)};
  std::vector<Detection> dets{det(gts[0], 0.9), det(gts[0], 0.8), det(gts[1], 0.4), det(gts[2], 0.7),
                              det(gts[3], 0.2)};
  dets.push_back({"b", 0, h, shifted(o, 40), 2, 1, 0.95});  // no overlap: FP at the top
  const auto r = evaluate(dets, gts, kfs, tax, rarity_split(tax), EvalMode::kOracle);
  std::map<std::pair<int, int>, long> counts{{{0, 1}, 30}, {{1, 2}, 24}, {{0, 2}, 25}};
  const auto ref = oracle::evaluate(dets, gts, 2, counts);
  EXPECT_NEAR(*r.map_full, *ref.map_full, 1e-12);
  EXPECT_NEAR(*r.map_rare, *ref.map_rare, 1e-12);
  EXPECT_NEAR(*r.map_nonrare, *ref.map_nonrare, 1e-12);
  // move/ball: [TP, FP, TP] over 2 GT.
  EXPECT_NEAR(*r.find_triplet("person-move-ball")->ap, 5.0 / 6.0, 1e-15);
  // near/cup: [FP, TP, TP] over 2 GT; the envelope lifts rank 2 to 2/3.
  EXPECT_NEAR(*r.find_triplet("person-near-cup")->ap, 2.0 / 3.0, 1e-15);
  EXPECT_TRUE(r.find_triplet("person-near-cup")->rare);
  EXPECT_FALSE(r.find_triplet("person-move-ball")->rare);
  EXPECT_EQ(r.triplets.size(), 2u);  // (move, cup) has no GT and is excluded
}

TEST(Evaluate, PredicateApPoolsCategories) {
  const auto tax = two_by_two();
  const std::vector<KeyframeRef> kfs{{"a", 0}};
  const Box h{0, 0, 10, 10}, o{20, 0, 30, 10};
  std::vector<GtInstance> gts{gt("a", 0, h, o, 1, 0)};
  // Right boxes and predicate, wrong object category.
  Detection d = det(gts[0], 0.5);
  d.object_category = 2;
  const auto r = evaluate({d}, gts, kfs, tax, rarity_split(tax), EvalMode::kOracle);
  EXPECT_EQ(r.find_triplet("person-move-ball")->ap, 0.0);
  EXPECT_EQ(r.find_predicate("move")->ap, 1.0);
  EXPECT_FALSE(r.find_predicate("near")->ap.has_value());
}

TEST(Evaluate, RarityBoundaryInReport) {
  const auto tax = two_by_two();
  const std::vector<KeyframeRef> kfs{{"a", 0}};
  std::vector<GtInstance> gts{gt("a", 0, {0, 0, 1, 1}, {1, 1, 2, 2}, 2, 1), gt("a", 0, {0, 0, 1, 1}, {1, 1, 2, 2}, 2, 0)};
  const auto r = evaluate({}, gts, kfs, tax, rarity_split(tax), EvalMode::kOracle);
  EXPECT_TRUE(r.find_triplet("person-near-cup")->rare);       // 24
  EXPECT_FALSE(r.find_triplet("person-move-cup")->rare);      // 25
  EXPECT_EQ(r.find_triplet("person-near-cup")->train_count, 24);
}

TEST(Evaluate, TruncatesToTopHundredPerKeyframe) {
  const auto tax = two_by_two();
  const std::vector<KeyframeRef> kfs{{"a", 0}, {"a", 8}};
  const Box h{0, 0, 10, 10}, o{20, 0, 30, 10};
  std::vector<GtInstance> gts{gt("a", 0, h, o, 1, 0)};
  std::vector<Detection> dets;
  for (int i = 0; i < 150; ++i) dets.push_back({"a", 0, h, shifted(o, 50), 1, 0, 0.9 - i * 0.001});
  dets.push_back(det(gts[0], 0.5));  // below all 150 FPs: cut by truncation
  dets.push_back({"a", 8, h, o, 1, 0, 0.3});
  const auto r = evaluate(dets, gts, kfs, tax, rarity_split(tax), EvalMode::kOracle);
  EXPECT_EQ(r.num_detections, 101u);
  EXPECT_EQ(r.truncated_keyframes, 1u);
  EXPECT_EQ(r.find_triplet("person-move-ball")->ap, 0.0);
  dets.back().score = 0.95;
  std::size_t truncated = 0;
  EXPECT_EQ(truncate_per_keyframe(dets, 100, &truncated).size(), 101u);
}

TEST(Evaluate, InputErrors) {
  const auto tax = two_by_two();
  const std::vector<KeyframeRef> kfs{{"a", 0}};
  const auto g = gt("a", 0, {0, 0, 1, 1}, {1, 1, 2, 2}, 1, 0);
  Detection unknown = det(g, 0.5);
  unknown.keyframe_index = 4;
  EXPECT_THROW(evaluate({unknown}, {g}, kfs, tax, rarity_split(tax), EvalMode::kOracle), InputError);
  EXPECT_THROW(evaluate({det(g, 0.0)}, {g}, kfs, tax, rarity_split(tax), EvalMode::kOracle), InputError);
  EXPECT_THROW(evaluate({det(g, 1.5)}, {g}, kfs, tax, rarity_split(tax), EvalMode::kOracle), InputError);
  Detection pred = det(g, 0.5);
  pred.predicate_id = 7;
  EXPECT_THROW(evaluate({pred}, {g}, kfs, tax, rarity_split(tax), EvalMode::kOracle), InputError);
}

TEST(Evaluate, JitteredBoxesNeverBeatExactBoxes) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    auto s = oracle::random_scenario(rng);
    const auto rarity = rarity_split(s.taxonomy);
    const auto exact = evaluate(gt_echo(s.gts), s.gts, s.keyframes, s.taxonomy, rarity, EvalMode::kOracle);
    auto jittered = gt_echo(s.gts);
    for (auto& d : jittered) {
      // Width-10 boxes shifted by 2.5 keep IoU 0.6; some shift by 4 (IoU 0.43).
      d.object_box = shifted(d.object_box, rng() % 3 == 0 ? 4.0 : 2.5);
    }
    const auto jit = evaluate(jittered, s.gts, s.keyframes, s.taxonomy, rarity, EvalMode::kDetection);
    if (exact.map_full) {
      EXPECT_LE(*jit.map_full, *exact.map_full);
    }
  }
}

TEST(Report, JsonRoundTripAndTables) {
  std::mt19937_64 rng(7);
  auto s = oracle::random_scenario(rng);
  while (s.gts.empty()) s = oracle::random_scenario(rng);
  const auto r = evaluate(s.dets, s.gts, s.keyframes, s.taxonomy, rarity_split(s.taxonomy), EvalMode::kOracle);
  const json j = report_json(r);
  for (const char* key : {"mode", "protocol", "mAP_full", "mAP_rare", "mAP_nonrare", "mAP_temporal", "mAP_spatial",
                          "num_keyframes", "num_detections", "truncated_keyframes", "triplets", "predicates"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["protocol"]["ap_interpolation"], "all-point");
  EXPECT_EQ(j["protocol"]["max_detections_per_keyframe"], 100);
  EXPECT_EQ(report_json(parse_report(j)), j);
  EXPECT_EQ(triplet_csv(r).substr(0, triplet_csv(r).find('\n')), "triplet,name,n_gt,n_det,train_count,rare,ap");
  EXPECT_THROW(parse_report(json::object()), InputError);
}

TEST(Detections, JsonLinesRoundTrip) {
  std::mt19937_64 rng(8);
  auto s = oracle::random_scenario(rng);
  while (s.dets.empty()) s = oracle::random_scenario(rng);
  const auto path = (std::filesystem::temp_directory_path() / "sthoi_dets.jsonl").string();
  save_detections(path, s.dets);
  const auto back = load_detections(path);
  ASSERT_EQ(back.size(), s.dets.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(detection_json(back[i]), detection_json(s.dets[i]));
  write_text_file(path, "{\"video_id\": \"a\"}\n");
  EXPECT_THROW(load_detections(path), InputError);
  std::filesystem::remove(path);
}

TEST(PairedMode, IdenticalTrajectoriesGiveIdenticalReports) {
  SyntheticSpec spec;
  spec.seed = 2;
  spec.num_train_videos = 0;
  spec.num_val_videos = 4;
  spec.width = spec.height = 16;
  const auto ds = generate_synthetic(spec);
  const auto split = synthetic_split(ds, ds.val, KeyframeFilter::kValidPair);
  ModelConfig mc;
  mc.variant = Variant::kTVP;
  mc.num_predicates = ds.taxonomy.num_predicates();
  mc.backbone_channels = {2, 3, 4};
  mc.roi = {2, 2, 1};
  mc.hidden = 8;
  mc.pose.mask_size = 4;
  mc.seed = 3;
  Model m(mc);
  AugmentConfig aug;
  aug.short_min = aug.short_max = aug.crop = aug.test_short = 16;
  const WindowConfig win;
  const auto paired = paired_mode_run(m, split, ds.taxonomy, win, aug, ds.val);
  EXPECT_TRUE(same_metrics(paired.oracle, paired.detection));
  EXPECT_EQ(paired.detection.mode, EvalMode::kDetection);

  AnnotationSet none;
  const auto empty = run_mode(m, split, ds.taxonomy, win, aug, EvalMode::kDetection, &none);
  EXPECT_EQ(empty.map_full, 0.0);
  EXPECT_EQ(empty.videos_without_trajectories.size(), 4u);
  EXPECT_THROW(run_mode(m, split, ds.taxonomy, win, aug, EvalMode::kDetection, nullptr), InputError);
}
