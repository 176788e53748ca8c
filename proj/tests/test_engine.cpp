#include "invdes/engine.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>

#include "invdes/error.hpp"
#include "invdes/util.hpp"

using namespace invdes;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  auto dir = fs::temp_directory_path() / (std::string("invdes_eng_") + tag + "_" +
                                          std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

// Desk-scale config that converges in seconds: tiny spectrum, loose target.
EngineConfig small_config(const fs::path& dir, double target = 5e-2) {
  EngineConfig cfg;
  cfg.oracle.kind = OracleKind::synthetic;
  cfg.oracle.input_dim = 14;
  cfg.oracle.output_dim = 21;
  cfg.oracle.seed = 404;
  cfg.budgets = {10, 5000, target};
  cfg.k0 = 44;
  cfg.na = {64, 40, 0.01, 0.1, 17};
  cfg.train = {1e-3, 40, 16};
  cfg.eval_targets = 4;
  cfg.top_m = 1;
  cfg.out_dir = (dir / "out").string();
  cfg.seed = 11;
  cfg.zero_timestamps = true;
  return cfg;
}

void write_target_spectrum(const fs::path& path, const EngineConfig& cfg) {
  auto bounds = GeometryBounds::unit(cfg.oracle.input_dim);
  Geometry g = sample_geometry(cfg.oracle, 9, 0, bounds);
  Spectrum s = simulate(g, cfg.oracle);
  std::string body;
  for (double v : s.values) body += format_double(v) + "\n";
  write_file_atomic(path.string(), body);
}

}  // namespace

TEST(EngineConfig, JsonRoundTripAndOverrides) {
  auto dir = temp_dir("cfg");
  EngineConfig cfg = small_config(dir);
  auto path = (dir / "config.json").string();
  write_file_atomic(path, cfg.to_json().dump(2));
  EngineConfig back = EngineConfig::load(path, {"budgets.target_metric=0.001",
                                                "oracle.seed=99", "llm.mode=deterministic"});
  EXPECT_DOUBLE_EQ(back.budgets.target_metric, 0.001);
  EXPECT_EQ(back.oracle.seed, 99u);
  EXPECT_EQ(back.k0, cfg.k0);
  EXPECT_THROW(EngineConfig::load(path, {"no-equals-sign"}), ConfigError);
  fs::remove_all(dir);
}

TEST(EngineConfig, ValidationCatchesBadValues) {
  auto dir = temp_dir("cfgbad");
  EngineConfig cfg = small_config(dir);
  cfg.k0 = 5;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = small_config(dir);
  cfg.llm_mode = "mock";  // without a script
  EXPECT_THROW(cfg.validate(), ValidationError);
  fs::remove_all(dir);
}

TEST(EngineRun, BothPlanWritesAllArtifacts) {
  auto dir = temp_dir("both");
  EngineConfig cfg = small_config(dir);
  auto target = dir / "target.txt";
  write_target_spectrum(target, cfg);
  Engine engine(cfg);
  json metrics = engine.run("fit a surrogate, then run inverse design on the target spectrum",
                            {{"target_spectrum_path", target.string()}, {"plan", "both"}});
  EXPECT_EQ(metrics["status"], "ok") << metrics.dump(2);
  for (const char* artifact :
       {"history.json", "forward_model/manifest.json", "designs.csv", "metrics.json",
        "manifest.json"}) {
    EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / artifact)) << artifact;
  }
  EXPECT_TRUE(metrics["forward"]["reached_target"].get<bool>()) << metrics.dump(2);
  fs::remove_all(dir);
}

TEST(EngineRun, ForwardOnlyEmitsNoDesigns) {
  auto dir = temp_dir("fwdonly");
  EngineConfig cfg = small_config(dir);
  Engine engine(cfg);
  json metrics = engine.run("develop a forward model", {{"plan", "forward-only"}});
  EXPECT_EQ(metrics["status"], "ok");
  EXPECT_FALSE(fs::exists(fs::path(cfg.out_dir) / "designs.csv"));
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "forward_model" / "weights.bin"));
  fs::remove_all(dir);
}

TEST(EngineRun, InverseOnlyWithMissingBundleFails) {
  auto dir = temp_dir("invmissing");
  EngineConfig cfg = small_config(dir);
  auto target = dir / "target.txt";
  write_target_spectrum(target, cfg);
  Engine engine(cfg);
  EXPECT_THROW(engine.run("inverse design",
                          {{"plan", "inverse-only"},
                           {"target_spectrum_path", target.string()},
                           {"bundle_path", (dir / "nothing").string()}}),
               Error);
  fs::remove_all(dir);
}

TEST(EngineRun, ShortfallSkipsInverseWithNonOkStatus) {
  auto dir = temp_dir("shortfall");
  EngineConfig cfg = small_config(dir, /*target=*/1e-9);  // unreachable
  cfg.budgets.max_rounds = 3;
  auto target = dir / "target.txt";
  write_target_spectrum(target, cfg);
  Engine engine(cfg);
  json metrics = engine.run("reach the unreachable",
                            {{"target_spectrum_path", target.string()}, {"plan", "both"}});
  EXPECT_EQ(metrics["status"], "error");
  EXPECT_EQ(metrics["error"]["kind"], "target-shortfall");
  EXPECT_FALSE(fs::exists(fs::path(cfg.out_dir) / "designs.csv"));
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "history.json"));  // partial artifacts retained
  fs::remove_all(dir);
}

TEST(EngineExperiment, TargetMseTrajectoryMonotoneAndDistributionWritten) {
  auto dir = temp_dir("exp_tmse");
  EngineConfig cfg = small_config(dir);
  Engine engine(cfg);
  json metrics = engine.experiment(RunMode::target_mse);
  EXPECT_EQ(metrics["status"], "ok");

  auto trajectory = read_file((fs::path(cfg.out_dir) / "trajectory.csv").string());
  std::istringstream ss(trajectory);
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line, "round,k,metric,action");
  long long prev_k = -1;
  while (std::getline(ss, line)) {
    auto first_comma = line.find(',');
    auto second_comma = line.find(',', first_comma + 1);
    long long k = std::stoll(line.substr(first_comma + 1, second_comma - first_comma - 1));
    EXPECT_GE(k, prev_k);
    prev_k = k;
  }

  auto dist = read_file((fs::path(cfg.out_dir) / "distribution.csv").string());
  EXPECT_NE(dist.find("# summary: best="), std::string::npos);
  int rows = 0;
  std::istringstream ds(dist);
  while (std::getline(ds, line)) {
    if (!line.empty() && line[0] != '#') ++rows;
  }
  EXPECT_EQ(rows, cfg.eval_targets);
  fs::remove_all(dir);
}

TEST(EngineExperiment, RerunsAreByteIdentical) {
  auto dir1 = temp_dir("rerun1");
  auto dir2 = temp_dir("rerun2");
  auto run = [](const fs::path& dir) {
    EngineConfig cfg = small_config(dir);
    Engine engine(cfg);
    engine.experiment(RunMode::target_mse);
    return read_file((fs::path(cfg.out_dir) / "trajectory.csv").string()) +
           read_file((fs::path(cfg.out_dir) / "distribution.csv").string());
  };
  EXPECT_EQ(run(dir1), run(dir2));
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST(EngineExperiment, FixedDatasetNeverGrows) {
  auto dir = temp_dir("exp_fixed");
  EngineConfig cfg = small_config(dir);

  // Pre-generate a synthetic pool of 220 pairs and point a file-backed oracle
  // at it.
  auto bounds = GeometryBounds::unit(14);
  Dataset pool = grow_dataset(Dataset(14, 21), 220, cfg.oracle, bounds);
  auto pool_path = (dir / "pool.csv").string();
  write_dataset_csv(pool_path, pool);
  cfg.oracle.kind = OracleKind::file_backed;
  cfg.oracle.path = pool_path;
  cfg.budgets.target_metric = 5e-2;

  Engine engine(cfg);
  json metrics = engine.experiment(RunMode::fixed_dataset);
  EXPECT_EQ(metrics["status"], "ok") << metrics.dump(2);

  History history = History::load((fs::path(cfg.out_dir) / "history.json").string());
  for (const auto& e : history.events()) {
    EXPECT_EQ(e.k, 220);  // every trajectory row at the pool size
  }
  // Inverse evaluation had no simulator: degraded surrogate-only scores.
  EXPECT_TRUE(metrics["inverse_eval"]["degraded"].get<bool>());
  fs::remove_all(dir);
}

TEST(EngineExperiment, FixedDatasetRequiresFileOracle) {
  auto dir = temp_dir("exp_fixed_bad");
  EngineConfig cfg = small_config(dir);
  Engine engine(cfg);
  EXPECT_THROW(engine.experiment(RunMode::fixed_dataset), ConfigError);
  fs::remove_all(dir);
}

TEST(EngineRun, MockModeDrivesPlannerAndController) {
  auto dir = temp_dir("mock");
  EngineConfig cfg = small_config(dir);
  // Scripted replies: planner intake, then controller decisions; architecture
  // proposal also goes through the mock.
  std::vector<std::string> replies = {
      R"({"plan": "forward-only", "target_metric": 0.05})",
      R"({"family": "plain-mlp", "hidden_dim": 16, "n_blocks": 1, "loss": "mse", "epochs": 10})",
      R"({"action": "done", "k_next": 44, "reason": "good enough"})",
  };
  auto script = (dir / "script.json").string();
  json doc;
  doc["replies"] = replies;
  write_file_atomic(script, doc.dump(2));
  cfg.llm_mode = "mock";
  cfg.mock_script = script;
  Engine engine(cfg);
  json metrics = engine.run("train a forward model", {});
  EXPECT_EQ(metrics["status"], "ok") << metrics.dump(2);
  // Conversation memory was recorded per session.
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "memory" / "planner.json"));
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "memory" / "controller.json"));
  fs::remove_all(dir);
}

TEST(OfflineGuarantee, NoNetworkAttemptsInDeterministicAndMockModes) {
  // Every Engine test in this binary ran in mock or deterministic mode; the
  // HTTP transport must never have been touched.
  EXPECT_EQ(HttpTransport::network_attempts(), 0);
}
