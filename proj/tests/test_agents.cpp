#include "invdes/agents.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>

#include "invdes/domain.hpp"
#include "invdes/error.hpp"
#include "invdes/oracle.hpp"
#include "invdes/util.hpp"

using namespace invdes;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  auto dir = fs::temp_directory_path() / (std::string("invdes_agents_") + tag + "_" +
                                          std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

// A small trained bundle on disk, for plan/verify tests.
std::string make_bundle(const fs::path& dir, int input_dim = 2, int output_dim = 3) {
  ModelSpec spec;
  spec.family = ModelFamily::plain_mlp;
  spec.input_dim = input_dim;
  spec.output_dim = output_dim;
  spec.hidden_dim = 4;
  spec.n_blocks = 1;
  ModelBundle bundle = build_model(spec);
  bundle.provenance.trained = true;
  bundle.metric = 0.01;
  const auto path = (dir / "bundle").string();
  save_bundle(bundle, path);
  return path;
}

void write_spectrum(const fs::path& path, int n) {
  std::string body;
  for (int i = 0; i < n; ++i) body += format_double(0.5) + "\n";
  write_file_atomic(path.string(), body);
}

}  // namespace

TEST(FileCheck, ReportsExistsAndMissingInOrder) {
  auto dir = temp_dir("fc");
  auto present = dir / "present.txt";
  write_file_atomic(present.string(), "x");
  auto missing = (dir / "missing.txt").string();
  auto report = file_check({missing, present.string()});
  ASSERT_EQ(report.size(), 2u);
  EXPECT_EQ(report[0].path, missing);
  EXPECT_EQ(report[0].status, FileStatus::missing);
  EXPECT_EQ(report[1].status, FileStatus::exists);
  EXPECT_THROW(file_check({}), ContractError);
  fs::remove_all(dir);
}

TEST(ExtractTargetMetric, ParsesCommonForms) {
  EXPECT_DOUBLE_EQ(extract_target_metric("with the MSE target 2e-3, then"), 2e-3);
  EXPECT_DOUBLE_EQ(extract_target_metric("MSE target of 0.002 please"), 0.002);
  EXPECT_DOUBLE_EQ(extract_target_metric(R"(the MSE target $2\times10^{-3}$, then)"), 2e-3);
  EXPECT_DOUBLE_EQ(extract_target_metric("target 3x10^-4"), 3e-4);
  EXPECT_TRUE(std::isnan(extract_target_metric("train a good model")));
}

TEST(PlanTask, QueryWithMetricAndInversePlansBoth) {
  auto dir = temp_dir("plan_both");
  auto target = dir / "target.txt";
  write_spectrum(target, 201);
  std::map<std::string, std::string> answers{
      {"target_spectrum_path", target.string()},
  };
  TaskSpec task = plan_task(
      "Train a regression model that predicts the transmission spectrum from the geometry "
      "parameters using supervised learning with the MSE target 2e-3, then run inverse design "
      "against the target spectrum.",
      answers, AgentMode::deterministic);
  EXPECT_DOUBLE_EQ(task.target_metric, 2e-3);
  EXPECT_EQ(task.plan, Plan::both);
  EXPECT_EQ(task.mode, RunMode::target_mse);
  EXPECT_FALSE(task.task_description.empty());
  fs::remove_all(dir);
}

TEST(PlanTask, TargetPlusBundleFallsBackToInverseOnly) {
  auto dir = temp_dir("plan_inv");
  auto target = dir / "target.txt";
  write_spectrum(target, 3);
  auto bundle = make_bundle(dir);
  std::map<std::string, std::string> answers{
      {"target_spectrum_path", target.string()},
      {"bundle_path", bundle},
      {"input_dim", "2"},
      {"output_dim", "3"},
  };
  TaskSpec task = plan_task("reach the target spectrum", answers, AgentMode::deterministic);
  EXPECT_EQ(task.plan, Plan::inverse_only);
  fs::remove_all(dir);
}

TEST(PlanTask, NoTargetSpectrumMeansForwardOnly) {
  TaskSpec task = plan_task("develop a forward model with target 1e-2", {},
                            AgentMode::deterministic);
  EXPECT_EQ(task.plan, Plan::forward_only);
  EXPECT_DOUBLE_EQ(task.target_metric, 1e-2);
}

TEST(PlanTask, MissingRequiredFieldIsListed) {
  std::map<std::string, std::string> answers{{"plan", "inverse-only"}};
  try {
    plan_task("inverse design this", answers, AgentMode::deterministic);
    FAIL() << "expected MissingInputError";
  } catch (const MissingInputError& ex) {
    EXPECT_NE(std::string(ex.what()).find("target_spectrum_path"), std::string::npos);
  }
}

TEST(PlanTask, LlmModeFillsFieldsFromReply) {
  auto dir = temp_dir("plan_llm");
  auto target = dir / "target.txt";
  write_spectrum(target, 201);
  auto client = LlmClient::mock({R"({"target_metric": 0.004, "plan": "both"})"});
  std::map<std::string, std::string> answers{{"target_spectrum_path", target.string()}};
  TaskSpec task = plan_task("fit a surrogate then invert", answers, AgentMode::llm, client.get());
  EXPECT_DOUBLE_EQ(task.target_metric, 0.004);
  EXPECT_EQ(task.plan, Plan::both);
  fs::remove_all(dir);
}

TEST(PlanTask, LlmFailureFallsBackToDeterministic) {
  auto client = LlmClient::mock({"garbage", "garbage", "garbage", "garbage", "garbage"});
  TaskSpec task = plan_task("forward model, target 5e-3", {}, AgentMode::llm, client.get());
  EXPECT_EQ(task.plan, Plan::forward_only);
  EXPECT_DOUBLE_EQ(task.target_metric, 5e-3);
}

TEST(VerifyInputs, AcceptsConsistentInputs) {
  auto dir = temp_dir("verify_ok");
  auto target = dir / "t.txt";
  write_spectrum(target, 3);
  auto bundle = make_bundle(dir);
  TaskSpec task;
  task.input_dim = 2;
  task.output_dim = 3;
  task.plan = Plan::inverse_only;
  task.bundle_path = bundle;
  task.target_spectrum_path = target.string();
  EXPECT_NO_THROW(verify_inputs(task));
  fs::remove_all(dir);
}

TEST(VerifyInputs, WrongSpectrumLengthNamesExpected) {
  auto dir = temp_dir("verify_len");
  auto target = dir / "t.txt";
  write_spectrum(target, 7);
  TaskSpec task;
  task.input_dim = 2;
  task.output_dim = 3;
  task.plan = Plan::both;
  task.target_spectrum_path = target.string();
  try {
    verify_inputs(task);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& ex) {
    EXPECT_NE(std::string(ex.what()).find("3"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(VerifyInputs, MissingDatasetInFixedMode) {
  TaskSpec task;
  task.plan = Plan::forward_only;
  task.mode = RunMode::fixed_dataset;
  EXPECT_THROW(verify_inputs(task), MissingInputError);

  task.dataset_path = "/nonexistent/pool.csv";
  EXPECT_THROW(verify_inputs(task), MissingInputError);
}

TEST(VerifyInputs, DatasetColumnCountChecked) {
  auto dir = temp_dir("verify_cols");
  auto pool = dir / "pool.csv";
  write_file_atomic(pool.string(), "1,2,3,4\n");
  TaskSpec task;
  task.input_dim = 2;
  task.output_dim = 3;  // wants 5 columns
  task.plan = Plan::forward_only;
  task.mode = RunMode::fixed_dataset;
  task.dataset_path = pool.string();
  EXPECT_THROW(verify_inputs(task), DimensionError);
  fs::remove_all(dir);
}

TEST(CodeModify, ExportLoadRoundTrip) {
  auto dir = temp_dir("cm");
  ModelSpec spec;
  spec.family = ModelFamily::residual_mlp;
  spec.input_dim = 2;
  spec.output_dim = 3;
  spec.hidden_dim = 4;
  spec.n_blocks = 1;
  ModelBundle bundle = build_model(spec);
  bundle.provenance.trained = true;
  bundle.metric = 0.5;
  const std::string exported = code_modify(bundle, dir.string());
  EXPECT_EQ(fs::path(exported).filename(), "forward_model");
  ModelBundle back = load_bundle(exported);
  EXPECT_EQ(back.weights, bundle.weights);
  fs::remove_all(dir);
}

TEST(CodeModify, ReExportLeavesNoStaleFiles) {
  auto dir = temp_dir("cm_idem");
  ModelBundle bundle = build_model(ModelSpec{ModelFamily::plain_mlp, 2, 3, 4, 1, 0,
                                             LossKind::mse, 1e-3, 1, 16, 0});
  bundle.provenance.trained = true;
  code_modify(bundle, dir.string());
  // Plant a stale file inside the exported dir, then re-export.
  write_file_atomic((fs::path(dir) / "forward_model" / "stale.txt").string(), "old");
  code_modify(bundle, dir.string());
  EXPECT_FALSE(fs::exists(fs::path(dir) / "forward_model" / "stale.txt"));
  EXPECT_NO_THROW(load_bundle((fs::path(dir) / "forward_model").string()));
  fs::remove_all(dir);
}

TEST(CodeModify, UntrainedBundleRejected) {
  auto dir = temp_dir("cm_untrained");
  ModelBundle bundle = build_model(ModelSpec{ModelFamily::plain_mlp, 2, 3, 4, 1, 0,
                                             LossKind::mse, 1e-3, 1, 16, 0});
  EXPECT_THROW(code_modify(bundle, dir.string()), NotTrainedError);
  fs::remove_all(dir);
}
