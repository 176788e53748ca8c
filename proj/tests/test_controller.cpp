#include "invdes/controller.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>

#include "invdes/error.hpp"
#include "invdes/util.hpp"

using namespace invdes;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

HistoryEvent ev(int round, long long k, double metric, Action action,
                const std::string& model_id = "m0") {
  return {round, k, metric, round == 0 ? "Initialization" : "r", action, model_id,
          zero_timestamp()};
}

History make_history(std::initializer_list<HistoryEvent> events) {
  History h;
  for (const auto& e : events) h.append(e);
  return h;
}

BudgetPolicy policy(double target = 2e-3, long long budget = 50000, int rounds = 50) {
  return {rounds, budget, target};
}

fs::path temp_dir(const char* tag) {
  auto dir = fs::temp_directory_path() / (std::string("invdes_ctrl_") + tag + "_" +
                                          std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

TaskSpec small_task(int input_dim = 14, int output_dim = 21) {
  TaskSpec task;
  task.input_dim = input_dim;
  task.output_dim = output_dim;
  task.target_metric = 2e-3;
  task.plan = Plan::forward_only;
  return task;
}

ForwardTrainConfig small_cfg(const fs::path& dir, double target = 1e30) {
  ForwardTrainConfig cfg;
  cfg.oracle.kind = OracleKind::synthetic;
  cfg.oracle.input_dim = 14;
  cfg.oracle.output_dim = 21;
  cfg.oracle.seed = 2024;
  cfg.policy = {50, 50000, target};
  cfg.k0 = 33;
  cfg.train = {1e-3, 8, 16};
  cfg.history_path = (dir / "history.json").string();
  cfg.seed = 7;
  cfg.zero_timestamps = true;
  return cfg;
}

}  // namespace

TEST(History, EnforcesInvariants) {
  History h;
  EXPECT_THROW(h.append(ev(0, 10, 1.0, Action::test)), ContractError);  // not Initialization
  h.append(ev(0, 10, 1.0, Action::generate));
  EXPECT_THROW(h.append(ev(0, 10, 1.0, Action::test)), ContractError);   // round not increasing
  EXPECT_THROW(h.append(ev(1, 9, 1.0, Action::test)), ContractError);    // k decreasing
  EXPECT_THROW(h.append(ev(1, 10, -1.0, Action::test)), ContractError);  // negative metric
  h.append(ev(1, 10, 0.5, Action::test));
  EXPECT_EQ(h.size(), 2u);
}

TEST(History, InfMetricRoundTripsAsString) {
  auto dir = temp_dir("inf");
  auto path = (dir / "h.json").string();
  {
    History h(path);
    h.append(ev(0, 10, 1.0, Action::generate));
    h.append(ev(1, 10, std::numeric_limits<double>::infinity(), Action::generate));
  }
  auto doc = json::parse(read_file(path));
  EXPECT_EQ(doc[1]["metric"], "inf");
  History back = History::load(path);
  EXPECT_TRUE(std::isinf(back.events()[1].metric));
  EXPECT_DOUBLE_EQ(back.events()[0].metric, 1.0);
  fs::remove_all(dir);
}

TEST(Decide, TargetReachedMeansDone) {
  History h = make_history({ev(0, 550, 1e-3, Action::generate)});
  auto d = decide(h, policy(2e-3), AgentMode::deterministic);
  EXPECT_EQ(d.action, Action::done);
  EXPECT_NE(d.reason.find("target reached"), std::string::npos);
}

TEST(Decide, SteepImprovementGrowsAndTests) {
  History h = make_history({ev(0, 1000, 0.1, Action::generate)});
  auto d = decide(h, policy(2e-3), AgentMode::deterministic);
  EXPECT_EQ(d.action, Action::test);
  EXPECT_EQ(d.k_next, 1500);  // ceil(1.5 * 1000)
}

TEST(Decide, DiminishingReturnsTriggerGenerateWithSaturationLanguage) {
  // Early rate: (0.1 - 0.05) / 500 = 1e-4; recent: (0.05 - 0.0499) / 500 =
  // 2e-7, far below 10% of the earlier rate.
  History h = make_history({ev(0, 500, 0.1, Action::generate),
                            ev(1, 1000, 0.05, Action::test),
                            ev(2, 1500, 0.0499, Action::test)});
  auto d = decide(h, policy(1e-4), AgentMode::deterministic);
  EXPECT_EQ(d.action, Action::generate);
  EXPECT_EQ(d.k_next, 1500);
  EXPECT_NE(d.reason.find("saturat"), std::string::npos);
}

TEST(Decide, BudgetExhaustedGenerates) {
  History h = make_history({ev(0, 500, 0.1, Action::generate)});
  auto d = decide(h, policy(1e-4, 500), AgentMode::deterministic);
  EXPECT_EQ(d.action, Action::generate);
  EXPECT_EQ(d.k_next, 500);
}

TEST(Decide, TwoFailedGeneratesMeanStagnationDone) {
  History h = make_history({ev(0, 500, 0.1, Action::generate, "a"),
                            ev(1, 750, 0.09, Action::test, "a"),
                            ev(2, 750, 0.12, Action::generate, "b"),
                            ev(3, 750, 0.15, Action::generate, "c")});
  auto d = decide(h, policy(1e-4), AgentMode::deterministic);
  EXPECT_EQ(d.action, Action::done);
  EXPECT_NE(d.reason.find("stopping"), std::string::npos);
}

TEST(Decide, EmptyHistoryIsContractViolation) {
  History h;
  EXPECT_THROW(decide(h, policy(), AgentMode::deterministic), ContractError);
}

TEST(Decide, LlmReplyClampedIntoRange) {
  History h = make_history({ev(0, 1000, 0.1, Action::generate)});
  auto client = LlmClient::mock({R"({"action": "test", "k_next": 999999, "reason": "go big"})"});
  auto d = decide(h, policy(1e-4, 50000), AgentMode::llm, client.get());
  EXPECT_EQ(d.action, Action::test);
  EXPECT_EQ(d.k_next, 50000);
  EXPECT_NE(d.reason.find("clamped"), std::string::npos);
}

TEST(Decide, LlmMalformedFallsBackToDeterministic) {
  History h = make_history({ev(0, 1000, 0.1, Action::generate)});
  auto client = LlmClient::mock({"nope", "nope", "nope", "nope"});
  auto d = decide(h, policy(1e-4), AgentMode::llm, client.get());
  EXPECT_EQ(d.action, Action::test);
  EXPECT_EQ(d.k_next, 1500);
  EXPECT_NE(d.reason.find("fallback"), std::string::npos);
}

TEST(Propose, LadderHeadAndOrder) {
  TaskSpec task = small_task();
  History h;
  TrainDefaults defaults;
  ModelSpec first = propose_model_spec(task, h, AgentMode::deterministic, nullptr, defaults, 1);
  EXPECT_EQ(first.family, ModelFamily::plain_mlp);
  EXPECT_EQ(first.hidden_dim, 256);
  EXPECT_EQ(first.n_blocks, 2);
  EXPECT_EQ(first.loss, LossKind::mse);

  History h2 = make_history({ev(0, 100, 0.1, Action::generate, first.id())});
  ModelSpec second = propose_model_spec(task, h2, AgentMode::deterministic, nullptr, defaults, 2);
  EXPECT_EQ(second.family, ModelFamily::residual_mlp);
  EXPECT_EQ(second.hidden_dim, 256);
  EXPECT_EQ(second.n_blocks, 4);
  EXPECT_EQ(second.loss, LossKind::mse);
}

TEST(Propose, ExhaustedLadderThrows) {
  TaskSpec task = small_task();
  TrainDefaults defaults;
  History h;
  int round = 0;
  // Consume all eight (family, dims, loss) triples.
  for (int i = 0; i < 8; ++i) {
    ModelSpec spec = propose_model_spec(task, h, AgentMode::deterministic, nullptr, defaults, i);
    h.append(ev(round, 100 + round, 0.5, Action::generate, spec.id()));
    ++round;
  }
  EXPECT_THROW(propose_model_spec(task, h, AgentMode::deterministic, nullptr, defaults, 9),
               ExplorationExhaustedError);
}

TEST(Propose, LlmInvalidSpecFallsBackToLadder) {
  TaskSpec task = small_task();
  TrainDefaults defaults;
  History h;
  auto client = LlmClient::mock({R"({"family": "plain-mlp", "hidden_dim": -5, "n_blocks": 1,
                                     "loss": "mse"})",
                                 "junk", "junk", "junk"});
  ModelSpec spec = propose_model_spec(task, h, AgentMode::llm, client.get(), defaults, 3);
  EXPECT_EQ(spec.family, ModelFamily::plain_mlp);  // ladder head
  EXPECT_EQ(spec.hidden_dim, 256);
}

TEST(Propose, LlmValidSpecAccepted) {
  TaskSpec task = small_task();
  TrainDefaults defaults;
  History h;
  auto client = LlmClient::mock(
      {R"({"family": "se-residual-mlp", "hidden_dim": 64, "n_blocks": 2, "se_reduction": 8,
           "loss": "smooth-l1", "epochs": 3})"});
  ModelSpec spec = propose_model_spec(task, h, AgentMode::llm, client.get(), defaults, 4);
  EXPECT_EQ(spec.family, ModelFamily::se_residual_mlp);
  EXPECT_EQ(spec.hidden_dim, 64);
  EXPECT_EQ(spec.se_reduction, 8);
  EXPECT_EQ(spec.loss, LossKind::smooth_l1);
  EXPECT_EQ(spec.epochs, 3);
  EXPECT_EQ(spec.batch_size, defaults.batch_size);
  EXPECT_EQ(spec.input_dim, 14);
  EXPECT_EQ(spec.output_dim, 21);
}

TEST(ForwardTrain, TrivialTargetStopsAfterInitialization) {
  auto dir = temp_dir("trivial");
  auto cfg = small_cfg(dir, /*target=*/1e30);
  ForwardTrainResult result = forward_train(small_task(), cfg);
  ASSERT_EQ(result.history.size(), 2u);
  EXPECT_EQ(result.history.events()[0].reason, "Initialization");
  EXPECT_EQ(result.history.events()[0].action, Action::generate);
  EXPECT_EQ(result.history.events()[1].action, Action::done);
  EXPECT_EQ(result.history.events()[1].round, 1);
  fs::remove_all(dir);
}

TEST(ForwardTrain, ScriptedMockReplaysActionSequence) {
  auto dir = temp_dir("script");
  auto cfg = small_cfg(dir, /*target=*/1e-12);  // unreachable, mock drives everything
  // llm call order: propose(init), decide x5; generate triggers another propose.
  auto client = LlmClient::mock({
      R"({"family": "plain-mlp", "hidden_dim": 8, "n_blocks": 1, "loss": "mse", "epochs": 2})",
      R"({"action": "test", "k_next": 44, "reason": "more data"})",
      R"({"action": "test", "k_next": 66, "reason": "more data"})",
      R"({"action": "test", "k_next": 99, "reason": "more data"})",
      R"({"action": "generate", "k_next": 99, "reason": "new arch"})",
      R"({"family": "residual-mlp", "hidden_dim": 8, "n_blocks": 1, "loss": "mse", "epochs": 2})",
      R"({"action": "done", "k_next": 99, "reason": "calling it"})",
  });
  cfg.mode = AgentMode::llm;
  cfg.llm = client.get();
  ForwardTrainResult result = forward_train(small_task(), cfg);
  const auto& events = result.history.events();
  ASSERT_EQ(events.size(), 6u);
  const Action want[] = {Action::generate, Action::test, Action::test,
                         Action::test,     Action::generate, Action::done};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(events[i].action, want[i]) << "event " << i;
  EXPECT_EQ(events[1].k, 44);
  EXPECT_EQ(events[2].k, 66);
  EXPECT_EQ(events[3].k, 99);
  EXPECT_EQ(events[4].k, 99);
  fs::remove_all(dir);
}

TEST(ForwardTrain, AdversarialMockIsStoppedByRoundGuard) {
  auto dir = temp_dir("adversarial");
  auto cfg = small_cfg(dir, /*target=*/1e-12);
  cfg.policy.max_rounds = 7;
  // Endless test actions, never done.
  std::vector<std::string> replies;
  replies.push_back(
      R"({"family": "plain-mlp", "hidden_dim": 8, "n_blocks": 1, "loss": "mse", "epochs": 2})");
  for (int i = 0; i < 100; ++i) {
    replies.push_back(R"({"action": "test", "k_next": 1000000, "reason": "never stop"})");
  }
  auto client = LlmClient::mock(replies);
  cfg.mode = AgentMode::llm;
  cfg.llm = client.get();
  ForwardTrainResult result = forward_train(small_task(), cfg);
  EXPECT_EQ(result.history.size(), 8u);  // init + 7 rounds
  EXPECT_EQ(result.history.back().round, 7);
  for (const auto& e : result.history.events()) {
    EXPECT_LE(e.k, cfg.policy.data_budget);
  }
  fs::remove_all(dir);
}

TEST(ForwardTrain, DivergenceLoggedAsInfAndLoopContinues) {
  auto dir = temp_dir("diverge");
  auto cfg = small_cfg(dir, /*target=*/1e-12);
  auto client = LlmClient::mock({
      R"({"family": "plain-mlp", "hidden_dim": 8, "n_blocks": 1, "loss": "mse", "epochs": 2})",
      R"({"action": "generate", "k_next": 40, "reason": "try big lr"})",
      R"({"family": "plain-mlp", "hidden_dim": 8, "n_blocks": 2, "loss": "mse", "epochs": 30,
          "learning_rate": 1e155})",
      R"({"action": "done", "k_next": 40, "reason": "enough"})",
  });
  cfg.mode = AgentMode::llm;
  cfg.llm = client.get();
  ForwardTrainResult result = forward_train(small_task(), cfg);
  const auto& events = result.history.events();
  ASSERT_EQ(events.size(), 3u);
  EXPECT_TRUE(std::isinf(events[1].metric));
  EXPECT_EQ(events[1].action, Action::generate);
  EXPECT_NE(events[1].reason.find("diverged"), std::string::npos);
  // Best bundle is still the initialization model.
  EXPECT_EQ(result.best_model_id, events[0].model_id);
  fs::remove_all(dir);
}

TEST(ForwardTrain, MonotoneKAndOneEventPerRound) {
  auto dir = temp_dir("monotone");
  auto cfg = small_cfg(dir, /*target=*/2e-3);
  cfg.policy.max_rounds = 12;
  cfg.train.epochs = 20;
  ForwardTrainResult result = forward_train(small_task(), cfg);
  const auto& events = result.history.events();
  for (std::size_t i = 1; i < events.size(); ++i) {
    EXPECT_GE(events[i].k, events[i - 1].k);
    EXPECT_EQ(events[i].round, static_cast<int>(i));
  }
  // Returned metric equals the minimum event metric.
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : events) best = std::min(best, e.metric);
  EXPECT_DOUBLE_EQ(result.best.metric, best);
  fs::remove_all(dir);
}

TEST(ForwardTrain, ByteIdenticalHistoryAcrossRuns) {
  auto dir1 = temp_dir("repro1");
  auto dir2 = temp_dir("repro2");
  auto run = [&](const fs::path& dir) {
    auto cfg = small_cfg(dir, 5e-2);
    cfg.policy.max_rounds = 6;
    cfg.train.epochs = 10;
    forward_train(small_task(), cfg);
    return read_file((dir / "history.json").string());
  };
  EXPECT_EQ(run(dir1), run(dir2));
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST(ForwardTrain, HistoryFileValidAfterRun) {
  auto dir = temp_dir("valid");
  auto cfg = small_cfg(dir, 5e-2);
  cfg.policy.max_rounds = 4;
  cfg.train.epochs = 5;
  ForwardTrainResult result = forward_train(small_task(), cfg);
  History loaded = History::load(cfg.history_path);
  EXPECT_EQ(loaded.size(), result.history.size());
  // No temp files left next to it.
  for (const auto& entry : fs::directory_iterator(dir)) {
    EXPECT_EQ(entry.path().extension(), ".json") << entry.path();
  }
  fs::remove_all(dir);
}

TEST(ForwardTrain, PreconditionsChecked) {
  auto dir = temp_dir("pre");
  auto cfg = small_cfg(dir);
  cfg.k0 = 5;
  EXPECT_THROW(forward_train(small_task(), cfg), ContractError);
  cfg.k0 = 100;
  cfg.policy.data_budget = 50;
  EXPECT_THROW(forward_train(small_task(), cfg), ContractError);
  fs::remove_all(dir);
}
