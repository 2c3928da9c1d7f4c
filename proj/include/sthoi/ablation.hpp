#pragma once

#include <algorithm>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sthoi/eval.hpp"
#include "sthoi/profile.hpp"
#include "sthoi/train.hpp"

namespace sthoi {

inline json profile_json(const ExperimentProfile& p) {
  const auto& m = p.model;
  return json{{"variant", to_string(m.variant)},
              {"window", {{"length", p.window.length}, {"stride", p.window.stride}, {"clamp_edges", p.window.clamp_edges}}},
              {"model",
               {{"num_predicates", m.num_predicates},
                {"segment_len", m.segment_len},
                {"backbone_channels", m.backbone_channels},
                {"roi", {m.roi.out_h, m.roi.out_w, m.roi.samples_per_bin}},
                {"hidden", m.hidden},
                {"pose_mask_size", m.pose.mask_size},
                {"pose_channels", {m.pose.channels1, m.pose.channels2}},
                {"score_mode", m.score_mode == ScoreMode::kSigmoid ? "sigmoid" : "softmax"},
                {"seed", m.seed}}},
              {"train",
               {{"base_lr", p.train.base_lr},
                {"momentum", p.train.momentum},
                {"weight_decay", p.train.weight_decay},
                {"epochs", p.train.epochs},
                {"decay_epochs", p.train.decay_epochs},
                {"decay_factor", p.train.decay_factor},
                {"batch_size", p.train.batch_size},
                {"augment", p.train.augment},
                {"seed", p.train.seed}}},
              {"augment",
               {{"short_min", p.augment.short_min},
                {"short_max", p.augment.short_max},
                {"crop", p.augment.crop},
                {"flip_p", p.augment.flip_p},
                {"test_short", p.augment.test_short}}}};
}

inline ExperimentProfile parse_profile(const json& j) {
  try {
    ExperimentProfile p;
    p.model.variant = parse_variant(j.at("variant").get<std::string>());
    const auto& w = j.at("window");
    p.window.length = w.at("length").get<std::size_t>();
    p.window.stride = w.at("stride").get<std::size_t>();
    p.window.clamp_edges = w.at("clamp_edges").get<bool>();
    const auto& m = j.at("model");
    p.model.num_predicates = m.at("num_predicates").get<std::size_t>();
    p.model.segment_len = m.at("segment_len").get<std::size_t>();
    p.model.backbone_channels = m.at("backbone_channels").get<std::array<std::size_t, 3>>();
    const auto roi = m.at("roi").get<std::array<std::size_t, 3>>();
    p.model.roi = {roi[0], roi[1], roi[2]};
    p.model.hidden = m.at("hidden").get<std::size_t>();
    p.model.pose.mask_size = m.at("pose_mask_size").get<std::size_t>();
    const auto pc = m.at("pose_channels").get<std::array<std::size_t, 2>>();
    p.model.pose.channels1 = pc[0];
    p.model.pose.channels2 = pc[1];
    p.model.score_mode = m.at("score_mode").get<std::string>() == "softmax" ? ScoreMode::kSoftmax : ScoreMode::kSigmoid;
    p.model.seed = m.at("seed").get<std::uint64_t>();
    const auto& t = j.at("train");
    p.train.base_lr = t.at("base_lr").get<double>();
    p.train.momentum = t.at("momentum").get<double>();
    p.train.weight_decay = t.at("weight_decay").get<double>();
    p.train.epochs = t.at("epochs").get<int>();
    p.train.decay_epochs = t.at("decay_epochs").get<std::vector<int>>();
    p.train.decay_factor = t.at("decay_factor").get<double>();
    p.train.batch_size = t.at("batch_size").get<std::size_t>();
    p.train.augment = t.at("augment").get<bool>();
    p.train.seed = t.at("seed").get<std::uint64_t>();
    const auto& a = j.at("augment");
    p.augment.short_min = a.at("short_min").get<std::size_t>();
    p.augment.short_max = a.at("short_max").get<std::size_t>();
    p.augment.crop = a.at("crop").get<std::size_t>();
    p.augment.flip_p = a.at("flip_p").get<double>();
    p.augment.test_short = a.at("test_short").get<std::size_t>();
    p.model.validate();
    p.train.validate();
    return p;
  } catch (const json::exception& e) {
    throw InputError(std::string("model config: ") + e.what());
  }
}

struct TrainedVariant {
  std::vector<EpochStats> history;
  EvalReport report;
  double train_seconds = 0.0;
};

/// Trains on `train` and evaluates in Oracle mode on `val`.
inline TrainedVariant train_and_evaluate(const ExperimentProfile& p, const Split& train, const Split& val,
                                         const Taxonomy& tax,
                                         std::unique_ptr<Model>* keep = nullptr) {
  auto model = std::make_unique<Model>(p.model);
  const auto samples = build_samples(train, tax, p.window);
  TrainedVariant out;
  const auto t0 = std::chrono::steady_clock::now();
  out.history = train_model(*model, samples, p.train, p.augment);
  out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.report = run_mode(*model, val, tax, p.window, p.augment, EvalMode::kOracle, nullptr);
  if (keep) *keep = std::move(model);
  return out;
}

/// Median over the defined values; undefined when none is defined.
inline std::optional<double> median(std::vector<std::optional<double>> v) {
  std::vector<double> d;
  for (const auto& x : v) {
    if (x) d.push_back(*x);
  }
  if (d.empty()) return std::nullopt;
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  return n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

/// One ablation row: per-seed medians of the report metrics.
struct AblationRow {
  std::string variant;
  std::size_t seeds = 0;
  std::optional<double> full, nonrare, rare, temporal, spatial;
  std::map<std::string, std::optional<double>> predicate_ap;
};

inline AblationRow ablation_row(const std::string& variant, const std::vector<EvalReport>& reports) {
  AblationRow r;
  r.variant = variant;
  r.seeds = reports.size();
  auto col = [&](auto get) {
    std::vector<std::optional<double>> v;
    for (const auto& rep : reports) v.push_back(get(rep));
    return median(v);
  };
  r.full = col([](const EvalReport& e) { return e.map_full; });
  r.nonrare = col([](const EvalReport& e) { return e.map_nonrare; });
  r.rare = col([](const EvalReport& e) { return e.map_rare; });
  r.temporal = col([](const EvalReport& e) { return e.map_temporal; });
  r.spatial = col([](const EvalReport& e) { return e.map_spatial; });
  if (!reports.empty()) {
    for (const auto& p : reports.front().predicates) {
      r.predicate_ap[p.name] = col([&](const EvalReport& e) {
        const auto* q = e.find_predicate(p.name);
        return q ? q->ap : std::nullopt;
      });
    }
  }
  return r;
}

namespace table {

inline std::string num(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

/// Relative change in percent against `base`; "-" for the base row itself.
inline std::string rel(const std::optional<double>& v, const std::optional<double>& base, bool is_base) {
  if (is_base) return "-";
  if (!v || !base || *base == 0.0) return "";
  std::ostringstream os;
  os << std::showpos << std::fixed << std::setprecision(1) << 100.0 * (*v - *base) / *base;
  return os.str();
}

inline const AblationRow* find(const std::vector<AblationRow>& rows, const std::string& variant) {
  for (const auto& r : rows) {
    if (r.variant == variant) return &r;
  }
  return nullptr;
}

}  // namespace table

/// Rows = variants; Full / Non-rare / Rare mAP and their change relative to baseline2d.
inline std::string table2_csv(const std::vector<AblationRow>& rows) {
  const auto* base = table::find(rows, "baseline2d");
  std::ostringstream os;
  os << "variant,full,nonrare,rare,full_rel_pct,nonrare_rel_pct,rare_rel_pct\n";
  for (const auto& r : rows) {
    const bool b = &r == base;
    os << r.variant << ',' << table::num(r.full) << ',' << table::num(r.nonrare) << ',' << table::num(r.rare) << ','
       << table::rel(r.full, base ? base->full : std::nullopt, b) << ','
       << table::rel(r.nonrare, base ? base->nonrare : std::nullopt, b) << ','
       << table::rel(r.rare, base ? base->rare : std::nullopt, b) << '\n';
  }
  return os.str();
}

/// Temporal and spatial mAP with their change relative to baseline2d.
inline std::string table3_csv(const std::vector<AblationRow>& rows) {
  const auto* base = table::find(rows, "baseline2d");
  std::ostringstream os;
  os << "variant,temporal,spatial,temporal_rel_pct,spatial_rel_pct\n";
  for (const auto& r : rows) {
    const bool b = &r == base;
    os << r.variant << ',' << table::num(r.temporal) << ',' << table::num(r.spatial) << ','
       << table::rel(r.temporal, base ? base->temporal : std::nullopt, b) << ','
       << table::rel(r.spatial, base ? base->spatial : std::nullopt, b) << '\n';
  }
  return os.str();
}

/// Long-format predicate AP for bar charts.
inline std::string predicate_table_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,predicate,ap\n";
  for (const auto& r : rows) {
    for (const auto& [name, ap] : r.predicate_ap) os << r.variant << ',' << name << ',' << table::num(ap) << '\n';
  }
  return os.str();
}

struct CheckResult {
  bool pass = false;
  std::string text;
};

/// Trajectory variants reach 0.90 predicate AP on towards and away while the
/// keyframe-only model stays at or below 0.60.
inline CheckResult temporal_discrimination(const std::vector<AblationRow>& rows,
                                           const std::vector<std::string>& strong = {"T", "T+V+P"},
                                           const std::string& weak = "baseline2d") {
  CheckResult c{true, ""};
  std::ostringstream os;
  auto ap = [&](const AblationRow* r, const std::string& p) -> std::optional<double> {
    if (!r) return std::nullopt;
    auto it = r->predicate_ap.find(p);
    return it == r->predicate_ap.end() ? std::nullopt : it->second;
  };
  for (const auto& v : strong) {
    for (const std::string p : {"towards", "away"}) {
      const auto x = ap(table::find(rows, v), p);
      const bool ok = x && *x >= 0.90;
      c.pass = c.pass && ok;
      os << v << ' ' << p << ' ' << (x ? table::num(x) : "n/a") << (ok ? " >= 0.90" : " FAILS >= 0.90") << "; ";
    }
  }
  for (const std::string p : {"towards", "away"}) {
    const auto x = ap(table::find(rows, weak), p);
    const bool ok = x && *x <= 0.60;
    c.pass = c.pass && ok;
    os << weak << ' ' << p << ' ' << (x ? table::num(x) : "n/a") << (ok ? " <= 0.60" : " FAILS <= 0.60") << "; ";
  }
  c.text = os.str();
  if (c.text.size() >= 2) c.text.resize(c.text.size() - 2);
  return c;
}

/// Full mAP ordering T+V+P >= T >= naive3d and T >= baseline2d, each by more than `margin`.
inline CheckResult ablation_ordering(const std::vector<AblationRow>& rows, double margin = 0.02) {
  CheckResult c{true, ""};
  std::ostringstream os;
  auto full = [&](const std::string& v) {
    const auto* r = table::find(rows, v);
    return r ? r->full : std::nullopt;
  };
  const std::pair<const char*, const char*> pairs[] = {{"T+V+P", "T"}, {"T", "naive3d"}, {"T", "baseline2d"}};
  for (const auto& [hi, lo] : pairs) {
    const auto a = full(hi), b = full(lo);
    const bool ok = a && b && *a - *b > margin;
    c.pass = c.pass && ok;
    os << hi << ' ' << table::num(a) << " vs " << lo << ' ' << table::num(b) << " (margin "
       << (a && b ? table::num(*a - *b) : "n/a") << (ok ? ")" : ", FAILS)") << "; ";
  }
  c.text = os.str();
  if (c.text.size() >= 2) c.text.resize(c.text.size() - 2);
  return c;
}

}  // namespace sthoi
