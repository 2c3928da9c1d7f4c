#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code;
  std::string output;
};

Run run(const std::string& exe, const std::string& args) {
  const std::string cmd = "\"" + exe + "\" " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, ""};
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

Run cli(const std::string& args) { return run(STHOI_CLI_PATH, args); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(1); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("sthoi_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Small spec so each test runs in well under a second.
  fs::path small_spec(int seed = 5) {
    const auto p = dir_ / ("spec" + std::to_string(seed) + ".json");
    dump(p, json{{"seed", seed}, {"num_train_videos", 6}, {"num_val_videos", 4}});
    return p;
  }

  fs::path synth(const std::string& name, int seed = 5) {
    const auto out = dir_ / name;
    const auto r = cli("synth --spec " + small_spec(seed).string() + " --out " + out.string());
    EXPECT_EQ(r.code, 0) << r.output;
    return out;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(cli("--help").code, 0);
  EXPECT_EQ(cli("no-such-command").code, 2);
  EXPECT_EQ(cli("synth").code, 2);
  EXPECT_EQ(cli("eval --data /definitely/missing --mode oracle --gt-echo").code, 2);
}

TEST_F(CliTest, SynthIsByteIdenticalForTheSameSeed) {
  const auto a = synth("a");
  const auto b = synth("b");
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
    const auto rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 3u + 10u);
  const auto c = synth("c", 6);
  EXPECT_NE(slurp(a / "train.json"), slurp(c / "train.json"));
}

TEST_F(CliTest, SynthManifestRecordsCountsAndSeed) {
  const auto out = synth("d");
  const auto m = json::parse(slurp(out / "run_manifest.json"));
  EXPECT_EQ(m["command"], "synth");
  EXPECT_EQ(m["outputs"]["train_videos"], 6);
  EXPECT_EQ(m["outputs"]["val_videos"], 4);
  EXPECT_EQ(m["seeds"]["data"], 5);
  for (const char* k : {"argv", "config", "tool_version", "finished_at", "wall_clock_seconds"})
    EXPECT_TRUE(m.contains(k)) << k;
}

TEST_F(CliTest, SynthDefaultsTo250Videos) {
  const auto out = dir_ / "full";
  const auto r = cli("synth --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto m = json::parse(slurp(out / "run_manifest.json"));
  EXPECT_EQ(m["outputs"]["train_videos"].get<int>() + m["outputs"]["val_videos"].get<int>(), 250);
  std::size_t vhfr = 0;
  for (const auto& e : fs::directory_iterator(out / "frames")) vhfr += e.path().extension() == ".vhfr";
  EXPECT_EQ(vhfr, 250u);
}

TEST_F(CliTest, SynthRejectsBadSpecNamingTheField) {
  const auto spec = dir_ / "bad.json";
  dump(spec, json{{"num_train_videos", -3}});
  const auto r = cli("synth --spec " + spec.string() + " --out " + (dir_ / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("num_train_videos"), std::string::npos) << r.output;
}

TEST_F(CliTest, GroundTruthEchoScoresOne) {
  const auto data = synth("e");
  const auto out = dir_ / "echo";
  const auto r = cli("eval --data " + data.string() + " --mode oracle --gt-echo --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rep = json::parse(slurp(out / "report.json"));
  EXPECT_EQ(rep["mAP_full"], 1.0);
  EXPECT_TRUE(fs::exists(out / "run_manifest.json"));
  EXPECT_TRUE(fs::exists(out / "detections.jsonl"));

  // The echoed detections file evaluates the same way.
  const auto again = dir_ / "again";
  const auto r2 = cli("eval --data " + data.string() + " --mode oracle --dets " + (out / "detections.jsonl").string() +
                      " --out " + again.string());
  ASSERT_EQ(r2.code, 0) << r2.output;
  EXPECT_EQ(json::parse(slurp(again / "report.json"))["mAP_full"], rep["mAP_full"]);
}

TEST_F(CliTest, DetectionModeWithoutTrajectoriesIsUsageError) {
  const auto data = synth("f");
  const auto r = cli("eval --data " + data.string() + " --mode detection --gt-echo");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--traj"), std::string::npos) << r.output;
}

TEST_F(CliTest, UnknownVariantIsRejected) {
  const auto data = synth("g");
  const auto r = cli("train --data " + data.string() + " --variant T+X --out " + (dir_ / "m.ckpt").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("T+X"), std::string::npos) << r.output;
}

TEST_F(CliTest, TrainThenEvalWritesCheckpointAndReport) {
  const auto data = synth("h");
  const auto ckpt = dir_ / "m" / "model.ckpt";
  const auto r = cli("train --data " + data.string() + " --variant T --epochs 2 --seed 3 --out " + ckpt.string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* suffix : {"", ".json", ".loss.csv"}) EXPECT_TRUE(fs::exists(ckpt.string() + suffix)) << suffix;
  EXPECT_TRUE(fs::exists(ckpt.parent_path() / "run_manifest.json"));
  const auto out = dir_ / "ev";
  const auto e = cli("eval --data " + data.string() + " --ckpt " + ckpt.string() + " --mode oracle --out " +
                     out.string());
  ASSERT_EQ(e.code, 0) << e.output;
  const auto rep = json::parse(slurp(out / "report.json"));
  EXPECT_TRUE(rep.contains("mAP_full"));
  EXPECT_TRUE(fs::exists(out / "triplet_ap.csv"));
}

TEST_F(CliTest, ConvertWritesLabelsAndRejectsUnknownInstance) {
  const auto data = synth("i");
  const auto out = dir_ / "conv";
  const auto r = cli("convert --ann " + (data / "train.json").string() + " --taxonomy " +
                     (data / "taxonomy.json").string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"keyframes.json", "gt.json", "rarity.json", "taxonomy.json", "run_manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_EQ(json::parse(slurp(out / "rarity.json"))["threshold"], 25);

  auto ann = json::parse(slurp(data / "train.json"));
  bool edited = false;
  for (auto& v : ann["videos"]) {
    if (v.contains("relations") && !v["relations"].empty()) {
      v["relations"][0]["object_id"] = "ghost";
      edited = true;
      break;
    }
  }
  ASSERT_TRUE(edited);
  const auto bad = dir_ / "bad_ann.json";
  dump(bad, ann);
  const auto e = cli("convert --ann " + bad.string() + " --out " + (dir_ / "conv2").string());
  EXPECT_EQ(e.code, 2);
  EXPECT_NE(e.output.find("ghost"), std::string::npos) << e.output;
}

TEST_F(CliTest, VerifySuitesPassAndFaultBuildFailsPooling) {
  const auto good = cli("verify --suite ap --out " + (dir_ / "v").string());
  EXPECT_EQ(good.code, 0) << good.output;
  const auto m = json::parse(slurp(dir_ / "v" / "run_manifest.json"));
  EXPECT_EQ(m["command"], "verify");
  EXPECT_EQ(cli("verify --suite pooling --out " + (dir_ / "p").string()).code, 0);
  const auto bad = run(STHOI_FAULT_CLI_PATH, "verify --suite pooling --out " + (dir_ / "fp").string());
  EXPECT_EQ(bad.code, 1) << bad.output;
  EXPECT_NE(bad.output.find("FAIL"), std::string::npos);
  EXPECT_EQ(cli("verify --suite nonsense").code, 2);
}
