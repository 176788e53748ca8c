#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "invdes/agents.hpp"
#include "invdes/oracle.hpp"
#include "invdes/surrogate.hpp"

namespace invdes {

enum class Action { generate, test, done };

std::string action_name(Action a);
Action parse_action(const std::string& s);

// One loop iteration: the dataset size it ran at, the metric it observed, the
// controller's stated reason and action, and the architecture involved.
struct HistoryEvent {
  int round = 0;
  long long k = 0;
  double metric = 0.0;
  std::string reason;
  Action action = Action::generate;
  std::string model_id;
  std::string timestamp;
};

// Ordered event log, persisted as a JSON array after every append
// (write-temp-then-rename, so the file on disk always parses).
class History {
 public:
  History() = default;
  explicit History(std::string path) : path_(std::move(path)) {}

  void append(HistoryEvent event);  // validates monotone round/k, persists
  const std::vector<HistoryEvent>& events() const { return events_; }
  bool empty() const { return events_.empty(); }
  const HistoryEvent& back() const { return events_.back(); }
  std::size_t size() const { return events_.size(); }

  nlohmann::json to_json() const;
  static History load(const std::string& path);

 private:
  std::string path_;  // empty = in-memory only
  std::vector<HistoryEvent> events_;
  void persist() const;
};

struct BudgetPolicy {
  int max_rounds = 50;
  long long data_budget = 50000;
  double target_metric = 2e-3;
};

struct ControllerDecision {
  Action action = Action::test;
  long long k_next = 0;
  std::string reason;
};

// Picks the next action and dataset size from the history and budgets.
//
// Deterministic policy, in precedence order: reach the target -> done; two
// consecutive new architectures failed to improve the best metric -> done
// (stagnation); improvement per added sample fell below 10% of the previous
// rate -> generate at the current size; data budget exhausted -> generate;
// otherwise grow the dataset by 1.5x (capped at the budget) and test.
//
// llm mode sends the history and budgets to the client with a constrained
// reply schema, clamps k_next into [current k, data_budget], and falls back
// to the deterministic policy when the exchange fails.
ControllerDecision decide(const History& history, const BudgetPolicy& policy, AgentMode mode,
                          LlmClient* llm = nullptr);

// Training hyperparameters applied to ladder-proposed architectures.
struct TrainDefaults {
  double learning_rate = 1e-3;
  int epochs = 150;
  int batch_size = 128;
};

// Proposes the next architecture. Deterministic mode walks a fixed ladder of
// four architectures, first with mse loss then with smooth-l1, skipping
// (family, dims, loss) triples already present in the history; an exhausted
// ladder throws ExplorationExhaustedError. llm mode asks for a schema-valid
// ModelSpec and falls back to the ladder on failure.
ModelSpec propose_model_spec(const TaskSpec& task, const History& history, AgentMode mode,
                             LlmClient* llm, const TrainDefaults& defaults, uint64_t init_seed);

struct ForwardTrainConfig {
  OracleConfig oracle;
  BudgetPolicy policy;
  long long k0 = 550;
  AgentMode mode = AgentMode::deterministic;
  LlmClient* llm = nullptr;
  TrainDefaults train;
  std::string history_path;  // empty keeps the history in memory
  uint64_t seed = 0;         // feeds architecture init seeds
  bool zero_timestamps = false;
  GeometryBounds bounds;  // defaults to the unit box for oracle.input_dim
};

struct ForwardTrainResult {
  ModelBundle best;       // lowest validation metric observed across the run
  std::string best_model_id;
  std::string latest_model_id;
  History history;
  Dataset dataset;  // final grown dataset
};

// The agentic training loop: initialize a dataset of k0 pairs, train an
// initial model and log the initialization event, then repeat decide ->
// grow -> generate/test until the controller says done or the hard round
// budget runs out. Each iteration appends exactly one event. A training
// divergence is logged with a +inf metric and the loop continues.
ForwardTrainResult forward_train(const TaskSpec& task, const ForwardTrainConfig& cfg);

}  // namespace invdes
