#pragma once

#include <map>
#include <memory>
#include <string>

#include "invdes/controller.hpp"
#include "invdes/neural_adjoint.hpp"

namespace invdes {

// Full engine configuration; maps 1:1 onto the JSON config file.
struct EngineConfig {
  OracleConfig oracle;
  BudgetPolicy budgets;
  long long k0 = 550;
  NaConfig na;
  TrainDefaults train;
  std::string llm_mode = "deterministic";  // deterministic | mock | live
  std::string mock_script;                 // replies file, mock mode only
  int eval_targets = 100;
  int top_m = 1;
  std::string out_dir = "out";
  uint64_t seed = 1;
  bool zero_timestamps = false;

  void validate() const;

  nlohmann::json to_json() const;
  static EngineConfig from_json(const nlohmann::json& j);
  // Load from file (or defaults when path is empty), then apply dotted-path
  // overrides like "budgets.target_metric=0.001".
  static EngineConfig load(const std::string& path,
                           const std::vector<std::string>& overrides = {});
};

// Per-target row of the inverse evaluation.
struct DistributionRow {
  int target_index = 0;
  double surrogate_loss = 0.0;
  std::optional<double> resim_error;
};

struct DistributionSummary {
  std::vector<DistributionRow> rows;
  double best = 0.0, median = 0.0, p95 = 0.0;
  bool degraded = false;
};

// Drives the pipelines and owns the LLM client and memory store.
class Engine {
 public:
  explicit Engine(EngineConfig cfg);

  // plan_task -> verify_inputs -> (per plan) forward_train -> code_modify ->
  // inverse_design -> design_report. Writes history.json, the forward_model
  // bundle, designs.csv, metrics.json and manifest.json under out_dir.
  // Returns the metrics document; "status" is "ok" on full success.
  nlohmann::json run(const std::string& query, const std::map<std::string, std::string>& answers);

  // The two experiment harnesses. target-mse runs the full training loop;
  // fixed-dataset pins k to the size of the backing pool, so the loop only
  // generates and tests. Both write trajectory.csv and distribution.csv.
  nlohmann::json experiment(RunMode which);

  // Pieces exposed for the harnesses and the acceptance suite.
  ForwardTrainResult run_forward_train(const TaskSpec& task);
  DistributionSummary inverse_evaluation(const ModelBundle& bundle, const std::string& csv_path);

  AgentMode agent_mode() const;
  LlmClient* llm() { return llm_.get(); }
  const EngineConfig& config() const { return cfg_; }

 private:
  EngineConfig cfg_;
  std::unique_ptr<MemoryStore> memory_;
  std::unique_ptr<LlmClient> llm_;

  TaskSpec default_task() const;
  void write_trajectory(const History& history, const std::string& path) const;
  void write_manifest(const std::map<std::string, std::string>& artifacts) const;
  void write_metrics(const nlohmann::json& metrics) const;
  bool ask_proceed_on_shortfall(double achieved, double target);
};

void write_distribution_csv(const std::string& path, const DistributionSummary& dist);

}  // namespace invdes
