#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sthoi/sthoi.hpp"

namespace fs = std::filesystem;
using namespace sthoi;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerify = 1;
constexpr int kExitUsage = 2;

// Thrown by handlers to end with a specific exit code after printing `what`.
struct Exit {
  int code;
  std::string what;
};

std::vector<std::string> g_argv;

RunManifest manifest(const std::string& command) {
  RunManifest m;
  m.command = command;
  m.argv = g_argv;
  return m;
}

fs::path parent_or_cwd(const fs::path& p) {
  const auto d = p.parent_path();
  return d.empty() ? fs::path(".") : d;
}

std::size_t frame_short_side(const AnnotationSet& ann) {
  if (ann.videos.empty()) throw InputError("dataset split has no videos");
  const auto& v = ann.videos.front();
  return static_cast<std::size_t>(std::min(v.width, v.height));
}

void print_suite(const verify::SuiteResult& r) {
  std::cout << r.name << ": " << r.passed << "/" << r.total << " passed (worst " << r.worst << ", " << r.seconds
            << " s) " << (r.ok() ? "PASS" : "FAIL");
  if (!r.ok() && !r.detail.empty()) std::cout << " -- " << r.detail;
  std::cout << '\n';
}

json suite_json(const verify::SuiteResult& r) {
  return json{{"suite", r.name}, {"passed", r.passed}, {"total", r.total}, {"worst", r.worst},
              {"seconds", r.seconds}, {"ok", r.ok()}, {"first_failure", r.detail}};
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

void cmd_synth(const SynthArgs& a) {
  SyntheticSpec spec;
  if (!a.spec.empty()) spec = parse_synthetic_spec(read_json_file(a.spec));
  if (a.seed) spec.seed = *a.seed;
  const auto ds = generate_synthetic(spec);
  write_dataset(a.out, ds);
  auto m = manifest("synth");
  m.config = synthetic_spec_json(spec);
  m.seeds = {{"data", spec.seed}};
  m.inputs = {{"spec", a.spec.empty() ? json(nullptr) : json(a.spec)}};
  m.outputs = {{"dataset", a.out},
               {"train_videos", ds.train.videos.size()},
               {"val_videos", ds.val.videos.size()},
               {"twin_pairs", ds.twins.size()}};
  m.write(a.out);
  std::cout << "wrote " << ds.train.videos.size() + ds.val.videos.size() << " videos ("
            << ds.train.videos.size() << " train, " << ds.val.videos.size() << " val) to " << a.out << '\n';
}

struct ConvertArgs {
  std::string ann, out, mode = "train", taxonomy;
};

void cmd_convert(const ConvertArgs& a) {
  const auto ann = load_annotations(a.ann);
  Taxonomy tax = a.taxonomy.empty() ? derive_taxonomy(ann) : load_taxonomy(a.taxonomy);
  // Validates every relation, including videos without keyframes.
  for (const auto& v : ann.videos) convert_labels(v, 0, tax);
  const auto filter = a.mode == "train" ? KeyframeFilter::kActiveRelation : KeyframeFilter::kValidPair;
  const auto keyframes = sample_keyframes(ann, filter);
  if (a.mode == "train") count_triplets(ann, keyframes, tax);
  json kf = json::array(), gt = json::array();
  for (const auto& k : keyframes) {
    kf.push_back({{"video_id", k.video_id}, {"frame", k.frame}});
    const auto labels = convert_labels(*ann.find(k.video_id), k.frame, tax);
    json pairs = json::array(), rows = json::array();
    for (std::size_t p = 0; p < labels.pairs.size(); ++p) {
      pairs.push_back({labels.instances[labels.pairs[p].human_index]->instance_id,
                       labels.instances[labels.pairs[p].object_index]->instance_id});
      json row = json::array();
      for (std::size_t c = 0; c < tax.num_predicates(); ++c) row.push_back(static_cast<int>(labels.gt.at(p, c)));
      rows.push_back(std::move(row));
    }
    gt.push_back({{"video_id", k.video_id}, {"frame", k.frame}, {"pairs", pairs}, {"gt", rows}});
  }
  const auto rarity = rarity_split(tax);
  json rar = json::array();
  for (const auto& t : tax.triplets) {
    rar.push_back({{"triplet", t.id}, {"name", tax.triplet_name(t.id)}, {"count", t.count},
                   {"rare", rarity.is_rare(t.id)}});
  }
  fs::create_directories(a.out);
  const fs::path out(a.out);
  write_text_file((out / "keyframes.json").string(), kf.dump(1) + "\n");
  write_text_file((out / "gt.json").string(), gt.dump(1) + "\n");
  write_text_file((out / "rarity.json").string(),
                  json{{"threshold", kRareThreshold}, {"triplets", rar}}.dump(1) + "\n");
  write_text_file((out / "taxonomy.json").string(), taxonomy_json(tax).dump(1) + "\n");
  auto m = manifest("convert");
  m.config = {{"mode", a.mode}};
  m.inputs = {{"annotations", a.ann}, {"taxonomy", a.taxonomy.empty() ? json(nullptr) : json(a.taxonomy)}};
  m.outputs = {{"dir", a.out}, {"keyframes", keyframes.size()}};
  m.write(out);
  std::cout << keyframes.size() << " keyframes (" << a.mode << " filter) written to " << a.out << '\n';
}

struct TrainArgs {
  std::string data, variant, out;
  int epochs = 20;
  std::uint64_t seed = 1;
};

void cmd_train(const TrainArgs& a) {
  const Variant variant = parse_variant(a.variant);
  const DatasetLayout layout{a.data};
  const auto tax = load_taxonomy(layout.taxonomy().string());
  const auto train = load_split(layout, "train", KeyframeFilter::kActiveRelation);
  auto p = desk_profile(variant, tax.num_predicates(), frame_short_side(train.ann), a.seed);
  p.train.epochs = a.epochs;
  p.train.validate();
  Model model(p.model);
  const auto samples = build_samples(train, tax, p.window);
  std::ostringstream curve;
  curve << "epoch,lr,mean_loss,seconds\n";
  const auto history = train_model(model, samples, p.train, p.augment, [&](const EpochStats& s) {
    std::cout << "epoch " << s.epoch << " lr " << s.lr << " loss " << s.mean_loss << " (" << s.seconds << " s)\n";
    curve << s.epoch << ',' << s.lr << ',' << s.mean_loss << ',' << s.seconds << '\n';
  });
  const fs::path ckpt(a.out);
  if (!ckpt.parent_path().empty()) fs::create_directories(ckpt.parent_path());
  model.save(ckpt.string());
  write_text_file(ckpt.string() + ".json", profile_json(p).dump(2) + "\n");
  write_text_file(ckpt.string() + ".loss.csv", curve.str());
  const bool decreasing = history.back().mean_loss < history.front().mean_loss;
  std::cout << "loss trend: " << history.front().mean_loss << " -> " << history.back().mean_loss
            << (decreasing ? " (decreasing)" : " (NOT decreasing)") << '\n';
  auto m = manifest("train");
  m.config = profile_json(p);
  m.seeds = {{"model", p.model.seed}, {"train", p.train.seed}};
  m.inputs = {{"data", a.data}, {"train_keyframes", samples.size()}};
  m.outputs = {{"checkpoint", ckpt.string()},
               {"config", ckpt.string() + ".json"},
               {"loss_curve", ckpt.string() + ".loss.csv"},
               {"final_loss", history.back().mean_loss},
               {"loss_decreased", decreasing}};
  m.write(parent_or_cwd(ckpt));
}

struct EvalArgs {
  std::string data, ckpt, mode, traj, dets, out, split = "val";
  bool gt_echo = false;
};

void cmd_eval(const EvalArgs& a) {
  const EvalMode mode = parse_eval_mode(a.mode);
  if (mode == EvalMode::kDetection && a.traj.empty()) {
    throw Exit{kExitUsage, "eval: --mode detection requires --traj <trajectories file>"};
  }
  if (a.ckpt.empty() && a.dets.empty() && !a.gt_echo) {
    throw Exit{kExitUsage, "eval: give --ckpt, --dets or --gt-echo"};
  }
  const DatasetLayout layout{a.data};
  const auto tax = load_taxonomy(layout.taxonomy().string());
  const auto split = load_split(layout, a.split, KeyframeFilter::kValidPair);
  const auto gts = ground_truth(split.ann, split.keyframes, tax);
  std::optional<AnnotationSet> tracks;
  if (!a.traj.empty()) tracks = load_annotations(a.traj);

  EvalReport rep;
  std::vector<Detection> dets;
  json config;
  if (a.gt_echo || !a.dets.empty()) {
    dets = a.gt_echo ? gt_echo(gts) : load_detections(a.dets);
    rep = evaluate(dets, gts, split.keyframes, tax, rarity_split(tax), mode);
    config = {{"source", a.gt_echo ? "gt-echo" : "detections file"}};
  } else {
    const auto p = parse_profile(read_json_file(a.ckpt + ".json"));
    Model model(p.model);
    model.load(a.ckpt);
    rep = run_mode(model, split, tax, p.window, p.augment, mode, tracks ? &*tracks : nullptr, &dets);
    config = profile_json(p);
  }
  const fs::path out = !a.out.empty() ? fs::path(a.out)
                       : !a.ckpt.empty() ? parent_or_cwd(a.ckpt) / ("eval_" + a.mode)
                                         : fs::path("eval_" + a.mode);
  write_report(out, rep);
  save_detections((out / "detections.jsonl").string(), dets);
  auto m = manifest("eval");
  m.config = {{"mode", a.mode}, {"split", a.split}, {"model", config}};
  m.inputs = {{"data", a.data}, {"checkpoint", a.ckpt}, {"trajectories", a.traj}, {"detections", a.dets}};
  m.outputs = {{"dir", out.string()}, {"mAP_full", optional_json(rep.map_full)}};
  m.write(out);
  std::cout << "mode " << a.mode << ": Full " << table::num(rep.map_full) << "  Rare " << table::num(rep.map_rare)
            << "  Non-rare " << table::num(rep.map_nonrare) << "  temporal " << table::num(rep.map_temporal)
            << "  spatial " << table::num(rep.map_spatial) << "\nreport written to " << out.string() << '\n';
}

struct AblateArgs {
  std::string data, out, seeds = "1", variants = "all";
  int epochs = 20;
};

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError("--seeds: '" + item + "' is not a non-negative integer");
    }
  }
  if (out.empty()) throw InputError("--seeds: need at least one seed");
  return out;
}

std::vector<Variant> parse_variant_list(const std::string& s) {
  if (s == "all") return {kAllVariants.begin(), kAllVariants.end()};
  std::vector<Variant> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_variant(item));
  return out;
}

void print_rows(const std::vector<AblationRow>& rows) {
  std::cout << table2_csv(rows) << '\n' << table3_csv(rows) << '\n';
}

void emit_tables(const fs::path& out, const std::vector<AblationRow>& rows) {
  write_text_file((out / "table2.csv").string(), table2_csv(rows));
  write_text_file((out / "table3.csv").string(), table3_csv(rows));
  write_text_file((out / "predicate_ap.csv").string(), predicate_table_csv(rows));
}

void cmd_ablate(const AblateArgs& a) {
  const auto seeds = parse_seeds(a.seeds);
  const auto variants = parse_variant_list(a.variants);
  const DatasetLayout layout{a.data};
  const auto tax = load_taxonomy(layout.taxonomy().string());
  const auto train = load_split(layout, "train", KeyframeFilter::kActiveRelation);
  const auto val = load_split(layout, "val", KeyframeFilter::kValidPair);
  const fs::path out(a.out);
  std::vector<AblationRow> rows;
  json runs = json::array();
  for (const auto v : variants) {
    std::vector<EvalReport> reports;
    for (const auto seed : seeds) {
      auto p = desk_profile(v, tax.num_predicates(), frame_short_side(train.ann), seed);
      p.train.epochs = a.epochs;
      p.train.validate();
      const auto res = train_and_evaluate(p, train, val, tax);
      const fs::path dir = out / to_string(v) / ("seed" + std::to_string(seed));
      write_report(dir, res.report);
      std::cout << to_string(v) << " seed " << seed << ": Full " << table::num(res.report.map_full) << " ("
                << res.train_seconds << " s training)\n";
      runs.push_back({{"variant", to_string(v)}, {"seed", seed}, {"report", dir.string()},
                      {"train_seconds", res.train_seconds}, {"final_loss", res.history.back().mean_loss}});
      reports.push_back(res.report);
    }
    rows.push_back(ablation_row(to_string(v), reports));
  }
  emit_tables(out, rows);
  print_rows(rows);
  const auto td = temporal_discrimination(rows);
  const auto order = ablation_ordering(rows);
  std::cout << "temporal-discrimination check: " << (td.pass ? "PASS" : "FAIL") << " (" << td.text << ")\n";
  std::cout << "ablation ordering check: " << (order.pass ? "PASS" : "FAIL") << " (" << order.text << ")\n";
  auto m = manifest("ablate");
  m.config = {{"epochs", a.epochs}, {"variants", a.variants},
              {"profile", profile_json(desk_profile(Variant::kTVP, tax.num_predicates(),
                                                    frame_short_side(train.ann), seeds.front()))}};
  m.seeds = seeds;
  m.inputs = {{"data", a.data}};
  m.outputs = {{"dir", a.out},
               {"runs", runs},
               {"temporal_discrimination", {{"pass", td.pass}, {"detail", td.text}}},
               {"ordering", {{"pass", order.pass}, {"detail", order.text}}}};
  m.write(out);
}

struct VerifyArgs {
  std::string suite = "all", out = ".";
};

int cmd_verify(const VerifyArgs& a, bool gradients_only) {
  std::vector<verify::SuiteResult> results;
  const std::string s = gradients_only ? "gradients" : a.suite;
  if (s == "all" || s == "gradients") results.push_back(verify::gradient_suite());
  if (s == "all" || s == "roialign") results.push_back(verify::roialign_suite());
  if (s == "all" || s == "pooling") results.push_back(verify::pooling_suite());
  if (s == "all" || s == "ap") results.push_back(verify::ap_suite());
  if (s == "all" || s == "twins") results.push_back(verify::twin_suite());
  if (results.empty()) throw Exit{kExitUsage, "verify: unknown suite '" + s + "'"};
  bool ok = true;
  json js = json::array();
  for (const auto& r : results) {
    print_suite(r);
    ok = ok && r.ok();
    js.push_back(suite_json(r));
  }
  auto m = manifest(gradients_only ? "gradcheck" : "verify");
  m.config = {{"suite", s}};
#ifdef STHOI_FAULT_INJECT_ROIALIGN
  m.config["fault_injection"] = "roialign";
#endif
  m.outputs = {{"suites", js}, {"ok", ok}};
  m.write(a.out);
  std::cout << (ok ? "all suites passed" : "verification FAILED") << '\n';
  return ok ? kExitOk : kExitVerify;
}

struct ReportArgs {
  std::string in, out;
};

void cmd_report(const ReportArgs& a) {
  const fs::path in(a.in);
  std::vector<AblationRow> rows;
  for (const auto v : kAllVariants) {
    const fs::path dir = in / to_string(v);
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> seed_dirs;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (fs::exists(e.path() / "report.json")) seed_dirs.push_back(e.path());
    }
    std::sort(seed_dirs.begin(), seed_dirs.end());
    std::vector<EvalReport> reports;
    for (const auto& d : seed_dirs) reports.push_back(parse_report(read_json_file((d / "report.json").string())));
    if (!reports.empty()) rows.push_back(ablation_row(to_string(v), reports));
  }
  if (rows.empty()) throw InputError("report: no <variant>/<seed>/report.json under " + a.in);
  const fs::path out = a.out.empty() ? in : fs::path(a.out);
  fs::create_directories(out);
  emit_tables(out, rows);
  print_rows(rows);
  auto m = manifest("report");
  m.inputs = {{"ablation_dir", a.in}};
  m.outputs = {{"dir", out.string()}, {"variants", rows.size()}};
  m.write(out);
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"Spatio-temporal human-object interaction detection toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic moving-shapes benchmark");
  synth->add_option("--spec", sa.spec, "Synthetic spec JSON (defaults apply when omitted)")->check(CLI::ExistingFile);
  synth->add_option("--out", sa.out, "Output dataset directory")->required();
  synth->add_option("--seed", sa.seed, "Override the spec seed");

  ConvertArgs ca;
  auto* convert = app.add_subcommand("convert", "Turn clip-level annotations into keyframe labels");
  convert->add_option("--ann", ca.ann, "Annotation JSON")->required()->check(CLI::ExistingFile);
  convert->add_option("--out", ca.out, "Output directory")->required();
  convert->add_option("--mode", ca.mode, "Keyframe filter")->check(CLI::IsMember({"train", "eval"}));
  convert->add_option("--taxonomy", ca.taxonomy, "Taxonomy JSON (derived from the annotations when omitted)")
      ->check(CLI::ExistingFile);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one model variant");
  train->add_option("--data", ta.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--variant", ta.variant, "baseline2d | naive3d | T | T+V | T+P | T+V+P")->required();
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--epochs", ta.epochs, "Epochs")->check(CLI::Range(1, 1000));
  train->add_option("--seed", ta.seed, "Model and training seed");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or a detections file");
  eval->add_option("--data", ea.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint path")->check(CLI::ExistingFile);
  eval->add_option("--mode", ea.mode, "oracle | detection")->required();
  eval->add_option("--traj", ea.traj, "Detected trajectories (annotation JSON without relations)")
      ->check(CLI::ExistingFile);
  eval->add_option("--dets", ea.dets, "Evaluate this detections file instead of a checkpoint")
      ->check(CLI::ExistingFile);
  eval->add_flag("--gt-echo", ea.gt_echo, "Evaluate detections that copy the ground truth");
  eval->add_option("--split", ea.split, "Split to evaluate");
  eval->add_option("--out", ea.out, "Report directory");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the six-variant grid");
  ablate->add_option("--data", aa.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--out", aa.out, "Output directory")->required();
  ablate->add_option("--epochs", aa.epochs, "Epochs per run")->check(CLI::Range(1, 1000));
  ablate->add_option("--seeds", aa.seeds, "Comma-separated seeds; tables report the median");
  ablate->add_option("--variants", aa.variants, "Comma-separated variants or 'all'");

  VerifyArgs va;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--out", va.out, "Directory for run_manifest.json");
  auto* verify_cmd = app.add_subcommand("verify", "Run the invariant suites");
  verify_cmd->add_option("--suite", va.suite, "all | gradients | roialign | pooling | ap | twins");
  verify_cmd->add_option("--out", va.out, "Directory for run_manifest.json");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Rebuild ablation tables from saved reports");
  report->add_option("--in", ra.in, "Ablation output directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", ra.out, "Table directory (defaults to --in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) cmd_synth(sa);
    if (*convert) cmd_convert(ca);
    if (*train) cmd_train(ta);
    if (*eval) cmd_eval(ea);
    if (*ablate) cmd_ablate(aa);
    if (*gradcheck) return cmd_verify(va, true);
    if (*verify_cmd) return cmd_verify(va, false);
    if (*report) cmd_report(ra);
  } catch (const Exit& e) {
    std::cerr << "error: " << e.what << '\n';
    return e.code;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitVerify;
  }
  return kExitOk;
}
