#include "invdes/agents.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <regex>

#include "invdes/domain.hpp"
#include "invdes/error.hpp"
#include "invdes/util.hpp"

namespace invdes {

namespace fs = std::filesystem;
using nlohmann::json;

std::string run_mode_name(RunMode m) {
  return m == RunMode::target_mse ? "target-mse" : "fixed-dataset";
}

std::string plan_name(Plan p) {
  switch (p) {
    case Plan::forward_only: return "forward-only";
    case Plan::inverse_only: return "inverse-only";
    case Plan::both: return "both";
  }
  return "?";
}

RunMode parse_run_mode(const std::string& s) {
  if (s == "target-mse") return RunMode::target_mse;
  if (s == "fixed-dataset") return RunMode::fixed_dataset;
  throw ValidationError("unknown run mode: '" + s + "' (want target-mse or fixed-dataset)");
}

Plan parse_plan(const std::string& s) {
  if (s == "forward-only") return Plan::forward_only;
  if (s == "inverse-only") return Plan::inverse_only;
  if (s == "both") return Plan::both;
  throw ValidationError("unknown plan: '" + s + "' (want forward-only, inverse-only or both)");
}

void TaskSpec::ensure_valid() const {
  std::vector<std::string> missing;
  if (input_dim < 1) missing.push_back("input_dim");
  if (output_dim < 1) missing.push_back("output_dim");
  if (!(target_metric > 0)) missing.push_back("target_metric");
  if ((plan == Plan::inverse_only || plan == Plan::both) && target_spectrum_path.empty()) {
    missing.push_back("target_spectrum_path (required by plan " + plan_name(plan) + ")");
  }
  if (plan == Plan::inverse_only && bundle_path.empty()) {
    missing.push_back("bundle_path (required by plan inverse-only)");
  }
  if (mode == RunMode::fixed_dataset && dataset_path.empty()) {
    missing.push_back("dataset_path (required by fixed-dataset mode)");
  }
  if (!missing.empty()) {
    std::string msg = "task is missing required inputs:";
    for (const auto& m : missing) msg += " " + m + ";";
    throw MissingInputError(msg);
  }
}

std::vector<FileCheckEntry> file_check(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ContractError("file_check: empty path list");
  std::vector<FileCheckEntry> out;
  out.reserve(paths.size());
  for (const auto& p : paths) {
    std::error_code ec;
    auto status = fs::status(p, ec);
    if (ec == std::errc::permission_denied) {
      out.push_back({p, FileStatus::permission_denied});
    } else if (fs::exists(status)) {
      out.push_back({p, FileStatus::exists});
    } else {
      out.push_back({p, FileStatus::missing});
    }
  }
  return out;
}

double extract_target_metric(const std::string& query) {
  // "2x10^-3" / "2*10^{-3}" / "2×10⁻³"-style scientific notation first.
  static const std::regex sci(
      R"(([0-9]+(?:\.[0-9]+)?)\s*(?:x|X|\*|\\times|×)\s*10\s*\^?\s*\{?\s*(-?[0-9]+)\s*\}?)");
  std::smatch m;
  if (std::regex_search(query, m, sci)) {
    return std::stod(m[1].str()) * std::pow(10.0, std::stod(m[2].str()));
  }
  // Otherwise a plain number following "target" or preceding-words like
  // "MSE target of 0.002" / "target MSE 2e-3".
  static const std::regex plain(
      R"((?:target|goal)[^0-9$]*([0-9]+(?:\.[0-9]+)?(?:[eE][-+]?[0-9]+)?))");
  if (std::regex_search(query, m, plain)) {
    return std::stod(m[1].str());
  }
  return std::numeric_limits<double>::quiet_NaN();
}

namespace {

bool bundle_loadable(const std::string& path) {
  if (path.empty()) return false;
  try {
    load_bundle(path);
    return true;
  } catch (const Error&) {
    return false;
  }
}

bool query_mentions(const std::string& query, const std::string& needle) {
  auto lower = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  return lower(query).find(lower(needle)) != std::string::npos;
}

TaskSpec fill_task(const std::string& query, const std::map<std::string, std::string>& answers) {
  TaskSpec task;
  auto get = [&](const char* key) -> const std::string* {
    auto it = answers.find(key);
    return it == answers.end() ? nullptr : &it->second;
  };
  if (auto* v = get("input_dim")) task.input_dim = std::stoi(*v);
  if (auto* v = get("output_dim")) task.output_dim = std::stoi(*v);
  if (auto* v = get("target_spectrum_path")) task.target_spectrum_path = *v;
  if (auto* v = get("dataset_path")) task.dataset_path = *v;
  if (auto* v = get("bundle_path")) task.bundle_path = *v;
  if (auto* v = get("task_description")) task.task_description = *v;

  if (auto* v = get("target_metric")) {
    task.target_metric = std::stod(*v);
  } else {
    const double from_query = extract_target_metric(query);
    if (std::isfinite(from_query)) task.target_metric = from_query;
  }

  if (auto* v = get("mode")) {
    task.mode = parse_run_mode(*v);
  } else {
    task.mode = task.dataset_path.empty() ? RunMode::target_mse : RunMode::fixed_dataset;
  }

  if (auto* v = get("plan")) {
    task.plan = parse_plan(*v);
  } else if (!task.target_spectrum_path.empty() && bundle_loadable(task.bundle_path)) {
    task.plan = Plan::inverse_only;
  } else if (task.target_spectrum_path.empty() && !query_mentions(query, "inverse")) {
    task.plan = Plan::forward_only;
  } else if (task.target_spectrum_path.empty()) {
    // The query asks for inverse design but no target file was provided;
    // forward modeling is all that can be planned.
    task.plan = Plan::forward_only;
  } else {
    task.plan = Plan::both;
  }

  if (task.task_description.empty()) {
    task.task_description =
        "Develop a regression model mapping " + std::to_string(task.input_dim) +
        " geometry parameters to a " + std::to_string(task.output_dim) +
        "-point spectrum. Metric: validation MSE, target " + format_double(task.target_metric) +
        ". Candidate solutions: plain, residual or squeeze-excitation MLPs with ReLU activations.";
  }
  return task;
}

}  // namespace

TaskSpec plan_task(const std::string& user_query, const std::map<std::string, std::string>& answers,
                   AgentMode mode, LlmClient* llm) {
  if (mode == AgentMode::deterministic || llm == nullptr) {
    TaskSpec task = fill_task(user_query, answers);
    task.ensure_valid();
    return task;
  }

  // Intake exchange: ask the model to extract/complete the task fields, merge
  // its answers over the provided ones, and fall back to deterministic fill
  // when the exchange fails.
  ResponseSchema schema;
  schema.description =
      R"({"input_dim": int, "output_dim": int, "target_metric": number, "plan": "forward-only"|"inverse-only"|"both", "mode": "target-mse"|"fixed-dataset", "target_spectrum_path": string, "dataset_path": string, "task_description": string} - omit fields you cannot determine)";
  schema.validate = [](const json& j) -> std::optional<std::string> {
    if (!j.is_object()) return "not an object";
    if (j.contains("input_dim") && (!j["input_dim"].is_number_integer() ||
                                    j["input_dim"].get<int>() < 1)) {
      return "input_dim must be a positive integer";
    }
    if (j.contains("output_dim") && (!j["output_dim"].is_number_integer() ||
                                     j["output_dim"].get<int>() < 1)) {
      return "output_dim must be a positive integer";
    }
    if (j.contains("target_metric") &&
        (!j["target_metric"].is_number() || !(j["target_metric"].get<double>() > 0))) {
      return "target_metric must be a positive number";
    }
    return std::nullopt;
  };

  std::map<std::string, std::string> merged = answers;
  try {
    json known(answers);
    Transcript messages;
    messages.push_back(
        {"system",
         "You are the planning agent of an inverse-design engine. Read the user query and the "
         "known answers, then reply with a single JSON object completing the task fields. Schema: " +
             schema.description,
         -1});
    messages.push_back({"user", "Query: " + user_query + "\nKnown answers: " + known.dump(), -1});
    json reply = llm->chat_json("planner", messages, schema);
    for (const auto& [key, value] : reply.items()) {
      if (merged.count(key)) continue;  // explicit answers win
      merged[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  } catch (const Error&) {
    // Transport or schema failure: proceed with what we have.
  }
  TaskSpec task = fill_task(user_query, merged);
  task.ensure_valid();
  return task;
}

TaskSpec verify_inputs(const TaskSpec& spec) {
  spec.ensure_valid();
  std::vector<std::string> problems;

  std::vector<std::string> paths;
  if (!spec.target_spectrum_path.empty()) paths.push_back(spec.target_spectrum_path);
  if (!spec.dataset_path.empty()) paths.push_back(spec.dataset_path);
  if (!spec.bundle_path.empty()) paths.push_back(spec.bundle_path);
  if (!paths.empty()) {
    for (const auto& entry : file_check(paths)) {
      if (entry.status == FileStatus::missing) {
        problems.push_back(entry.path + ": file not found; provide or correct this input");
      } else if (entry.status == FileStatus::permission_denied) {
        problems.push_back(entry.path + ": permission denied; fix file permissions");
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "input verification failed:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw MissingInputError(msg);
  }

  if (!spec.target_spectrum_path.empty()) {
    const auto values = read_spectrum_file(spec.target_spectrum_path);
    if (static_cast<int>(values.size()) != spec.output_dim) {
      throw DimensionError("target spectrum " + spec.target_spectrum_path + " has " +
                           std::to_string(values.size()) + " points, expected output_dim = " +
                           std::to_string(spec.output_dim));
    }
  }
  if (!spec.dataset_path.empty()) {
    const std::size_t cols = count_csv_columns(spec.dataset_path);
    const std::size_t want = static_cast<std::size_t>(spec.input_dim) + spec.output_dim;
    if (cols != want) {
      throw DimensionError("dataset " + spec.dataset_path + " has " + std::to_string(cols) +
                           " columns, expected input_dim + output_dim = " + std::to_string(want));
    }
  }
  if (!spec.bundle_path.empty()) {
    ModelBundle bundle = load_bundle(spec.bundle_path);  // throws LoadError with diagnostics
    if (bundle.spec.input_dim != spec.input_dim || bundle.spec.output_dim != spec.output_dim) {
      throw DimensionError("bundle " + spec.bundle_path + " maps " +
                           std::to_string(bundle.spec.input_dim) + " -> " +
                           std::to_string(bundle.spec.output_dim) + ", task expects " +
                           std::to_string(spec.input_dim) + " -> " +
                           std::to_string(spec.output_dim));
    }
  }
  return spec;
}

std::string code_modify(const ModelBundle& bundle, const std::string& out_dir) {
  if (!bundle.provenance.trained) {
    throw NotTrainedError("refusing to export an untrained bundle");
  }
  fs::create_directories(out_dir);
  const fs::path target = fs::path(out_dir) / "forward_model";
  const fs::path tmp = fs::path(out_dir) / (".forward_model.tmp-" + std::to_string(::getpid()));

  std::error_code ec;
  fs::remove_all(tmp, ec);
  save_bundle(bundle, tmp.string());
  fs::remove_all(target, ec);
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove_all(tmp, ec);
    throw IoError("could not move bundle into place: " + ec.message());
  }
  return target.string();
}

}  // namespace invdes
