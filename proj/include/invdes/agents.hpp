#pragma once

#include <map>
#include <string>
#include <vector>

#include "invdes/llm.hpp"
#include "invdes/surrogate.hpp"

namespace invdes {

enum class RunMode { target_mse, fixed_dataset };
enum class Plan { forward_only, inverse_only, both };

std::string run_mode_name(RunMode m);
std::string plan_name(Plan p);
RunMode parse_run_mode(const std::string& s);
Plan parse_plan(const std::string& s);

// The planned job: dimensions, goal metric, referenced files and the chosen
// plan. inverse-only and both require a target spectrum; fixed-dataset
// requires a dataset path.
struct TaskSpec {
  int input_dim = 14;
  int output_dim = 201;
  double target_metric = 2e-3;
  std::string target_spectrum_path;
  std::string dataset_path;
  std::string bundle_path;  // pre-existing trained bundle, if any
  RunMode mode = RunMode::target_mse;
  Plan plan = Plan::both;
  std::string task_description;  // brief handed to the architecture proposer

  void ensure_valid() const;  // throws MissingInputError listing fields
};

enum class FileStatus { exists, missing, permission_denied };

struct FileCheckEntry {
  std::string path;
  FileStatus status;
};

// Pure existence report, order-preserving; never creates or modifies files.
std::vector<FileCheckEntry> file_check(const std::vector<std::string>& paths);

enum class AgentMode { deterministic, llm };

// Builds a TaskSpec from the user query plus an answer map. In llm mode the
// client is asked to fill missing fields (schema-validated, with fallback to
// the deterministic path). Deterministic mode extracts the target metric from
// the query when present and applies the plan fallback rules: target spectrum
// plus loadable bundle -> inverse-only; no target spectrum -> forward-only;
// otherwise both.
TaskSpec plan_task(const std::string& user_query, const std::map<std::string, std::string>& answers,
                   AgentMode mode, LlmClient* llm = nullptr);

// Pulls a metric like "2e-3", "0.002" or "2x10^-3" out of query text.
// Returns NaN when the query names none.
double extract_target_metric(const std::string& query);

// Checks that every referenced file exists and is dimensionally consistent:
// target spectrum length == output_dim, dataset columns == input_dim +
// output_dim, bundle loadable with matching dims. Read-only. Throws
// MissingInputError / DimensionError with remediation hints.
TaskSpec verify_inputs(const TaskSpec& spec);

// Exports a trained bundle under the canonical name "forward_model" inside
// out_dir, in the directory format the inverse-design tool loads. Atomic and
// idempotent; re-export replaces any previous content. Returns the bundle
// directory path.
std::string code_modify(const ModelBundle& bundle, const std::string& out_dir);

}  // namespace invdes
