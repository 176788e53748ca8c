#include "invdes/engine.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "invdes/error.hpp"
#include "invdes/jsonio.hpp"
#include "invdes/util.hpp"

namespace invdes {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kEngineVersion = "0.1.0";
constexpr uint64_t kNaTargetStream = 0x7a46e7ULL;

}  // namespace

void EngineConfig::validate() const {
  oracle.validate();
  na.validate();
  if (budgets.max_rounds < 1) throw ValidationError("budgets.max_rounds must be >= 1");
  if (budgets.data_budget < 1) throw ValidationError("budgets.data_budget must be >= 1");
  if (!(budgets.target_metric > 0)) throw ValidationError("budgets.target_metric must be > 0");
  if (k0 < 11) throw ValidationError("k0 must be >= 11");
  if (k0 > budgets.data_budget) throw ValidationError("k0 must be <= budgets.data_budget");
  if (eval_targets < 1) throw ValidationError("eval_targets must be >= 1");
  if (top_m < 0) throw ValidationError("top_m must be >= 0");
  if (llm_mode != "deterministic" && llm_mode != "mock" && llm_mode != "live") {
    throw ValidationError("llm mode must be deterministic, mock or live");
  }
  if (llm_mode == "mock" && mock_script.empty()) {
    throw ValidationError("mock llm mode requires a mock_script path");
  }
}

json EngineConfig::to_json() const {
  return json{
      {"oracle",
       {{"kind", oracle.kind == OracleKind::synthetic ? "synthetic" : "file-backed"},
        {"input_dim", oracle.input_dim},
        {"output_dim", oracle.output_dim},
        {"seed", oracle.seed},
        {"path", oracle.path}}},
      {"budgets",
       {{"max_rounds", budgets.max_rounds},
        {"data_budget", budgets.data_budget},
        {"target_metric", budgets.target_metric}}},
      {"k0", k0},
      {"na",
       {{"n_candidates", na.n_candidates},
        {"n_steps", na.n_steps},
        {"step_size", na.step_size},
        {"boundary_weight", na.boundary_weight},
        {"seed", na.seed}}},
      {"train",
       {{"learning_rate", train.learning_rate},
        {"epochs", train.epochs},
        {"batch_size", train.batch_size}}},
      {"llm", {{"mode", llm_mode}, {"mock_script", mock_script}}},
      {"eval_targets", eval_targets},
      {"top_m", top_m},
      {"out_dir", out_dir},
      {"seed", seed},
      {"zero_timestamps", zero_timestamps}};
}

EngineConfig EngineConfig::from_json(const json& j) {
  EngineConfig cfg;
  if (j.contains("oracle")) {
    const auto& o = j["oracle"];
    const std::string kind = o.value("kind", "synthetic");
    if (kind == "synthetic") {
      cfg.oracle.kind = OracleKind::synthetic;
    } else if (kind == "file-backed") {
      cfg.oracle.kind = OracleKind::file_backed;
    } else {
      throw ValidationError("oracle.kind must be synthetic or file-backed");
    }
    cfg.oracle.input_dim = o.value("input_dim", 14);
    cfg.oracle.output_dim = o.value("output_dim", 201);
    cfg.oracle.seed = o.value("seed", uint64_t{0});
    cfg.oracle.path = o.value("path", "");
  }
  if (j.contains("budgets")) {
    const auto& b = j["budgets"];
    cfg.budgets.max_rounds = b.value("max_rounds", 50);
    cfg.budgets.data_budget = b.value("data_budget", 50000LL);
    cfg.budgets.target_metric = b.value("target_metric", 2e-3);
  }
  cfg.k0 = j.value("k0", 550LL);
  if (j.contains("na")) {
    const auto& n = j["na"];
    cfg.na.n_candidates = n.value("n_candidates", 1024);
    cfg.na.n_steps = n.value("n_steps", 300);
    cfg.na.step_size = n.value("step_size", 0.01);
    cfg.na.boundary_weight = n.value("boundary_weight", 0.1);
    cfg.na.seed = n.value("seed", uint64_t{0});
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.learning_rate = t.value("learning_rate", 1e-3);
    cfg.train.epochs = t.value("epochs", 150);
    cfg.train.batch_size = t.value("batch_size", 128);
  }
  if (j.contains("llm")) {
    cfg.llm_mode = j["llm"].value("mode", "deterministic");
    cfg.mock_script = j["llm"].value("mock_script", "");
  }
  cfg.eval_targets = j.value("eval_targets", 100);
  cfg.top_m = j.value("top_m", 1);
  cfg.out_dir = j.value("out_dir", "out");
  cfg.seed = j.value("seed", uint64_t{1});
  cfg.zero_timestamps = j.value("zero_timestamps", false);
  return cfg;
}

EngineConfig EngineConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    try {
      doc = json::parse(read_file(path));
    } catch (const json::exception& ex) {
      throw ConfigError("config file is not valid JSON: " + std::string(ex.what()));
    }
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // plain string
    json* node = &doc;
    std::istringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("--set: empty key");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    (*node)[parts.back()] = value;
  }
  EngineConfig cfg = from_json(doc);
  cfg.validate();
  return cfg;
}

// --- Engine -------------------------------------------------------------------------

Engine::Engine(EngineConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  fs::create_directories(cfg_.out_dir);
  memory_ = std::make_unique<MemoryStore>((fs::path(cfg_.out_dir) / "memory").string());
  if (cfg_.llm_mode == "mock") {
    llm_ = std::make_unique<LlmClient>(LlmConfig{}, MockTransport::from_file(cfg_.mock_script),
                                       memory_.get());
  } else if (cfg_.llm_mode == "live") {
    llm_ = LlmClient::live(LlmConfig::from_env(), memory_.get());
  }
}

AgentMode Engine::agent_mode() const {
  return llm_ ? AgentMode::llm : AgentMode::deterministic;
}

TaskSpec Engine::default_task() const {
  TaskSpec task;
  task.input_dim = cfg_.oracle.input_dim;
  task.output_dim = cfg_.oracle.output_dim;
  task.target_metric = cfg_.budgets.target_metric;
  task.plan = Plan::forward_only;
  task.mode = RunMode::target_mse;
  task.task_description =
      "Develop a regression model mapping " + std::to_string(task.input_dim) +
      " geometry parameters to a " + std::to_string(task.output_dim) +
      "-point spectrum; reach validation MSE " + format_double(task.target_metric) + ".";
  return task;
}

ForwardTrainResult Engine::run_forward_train(const TaskSpec& task) {
  ForwardTrainConfig ftc;
  ftc.oracle = cfg_.oracle;
  ftc.policy = cfg_.budgets;
  ftc.policy.target_metric = task.target_metric;
  ftc.k0 = cfg_.k0;
  ftc.mode = agent_mode();
  ftc.llm = llm_.get();
  ftc.train = cfg_.train;
  ftc.history_path = (fs::path(cfg_.out_dir) / "history.json").string();
  ftc.seed = cfg_.seed;
  ftc.zero_timestamps = cfg_.zero_timestamps;

  if (task.mode == RunMode::fixed_dataset) {
    // The whole pool is the dataset: no growth, the controller only
    // generates and tests at fixed k.
    ftc.oracle.kind = OracleKind::file_backed;
    if (!task.dataset_path.empty()) ftc.oracle.path = task.dataset_path;
    const auto rows = count_csv_rows(ftc.oracle.path);
    if (rows < 11) {
      throw CapacityError("fixed-dataset pool " + ftc.oracle.path + " holds only " +
                          std::to_string(rows) + " rows (need >= 11)");
    }
    ftc.k0 = static_cast<long long>(rows);
    ftc.policy.data_budget = static_cast<long long>(rows);
  }
  return forward_train(task, ftc);
}

DistributionSummary Engine::inverse_evaluation(const ModelBundle& bundle,
                                               const std::string& csv_path) {
  const GeometryBounds bounds = GeometryBounds::unit(cfg_.oracle.input_dim);
  DistributionSummary dist;

  // Held-out targets: fresh geometries from the evaluation stream when the
  // oracle can simulate; otherwise the pool's validation rows (never used for
  // gradient steps) with surrogate-only scoring.
  std::vector<Spectrum> targets;
  if (cfg_.oracle.kind == OracleKind::synthetic) {
    for (int i = 0; i < cfg_.eval_targets; ++i) {
      Geometry g = sample_geometry(cfg_.oracle, sample_stream::kEvaluation, i, bounds);
      targets.push_back(simulate(g, cfg_.oracle));
    }
  } else {
    Dataset pool = read_dataset_csv(cfg_.oracle.path, cfg_.oracle.input_dim,
                                    cfg_.oracle.output_dim);
    const auto val = pool.validation_indices();
    if (val.empty()) throw CapacityError("pool has no validation rows for evaluation targets");
    for (int i = 0; i < cfg_.eval_targets; ++i) {
      targets.push_back(pool.pair(val[i % val.size()]).spectrum);
    }
  }

  std::vector<double> scores;
  for (int i = 0; i < cfg_.eval_targets; ++i) {
    NaConfig na = cfg_.na;
    na.seed = counter_hash(cfg_.na.seed, kNaTargetStream, static_cast<uint64_t>(i));
    auto outcome = inverse_design(targets[i], bundle, bounds, na);
    auto report = design_report(std::move(outcome.results), targets[i], cfg_.oracle,
                                std::max(1, cfg_.top_m));
    const auto& top = report.results.front();
    DistributionRow row;
    row.target_index = i;
    row.surrogate_loss = top.surrogate_loss;
    row.resim_error = top.resim_error;
    dist.degraded = dist.degraded || report.degraded;
    scores.push_back(row.resim_error ? *row.resim_error : row.surrogate_loss);
    dist.rows.push_back(row);
  }
  dist.best = *std::min_element(scores.begin(), scores.end());
  dist.median = percentile(scores, 0.5);
  dist.p95 = percentile(scores, 0.95);
  if (!csv_path.empty()) write_distribution_csv(csv_path, dist);
  return dist;
}

void write_distribution_csv(const std::string& path, const DistributionSummary& dist) {
  std::ostringstream out;
  out << "# columns: target,surrogate_loss,resim_error\n";
  for (const auto& row : dist.rows) {
    out << row.target_index << "," << format_double(row.surrogate_loss) << ",";
    if (row.resim_error) out << format_double(*row.resim_error);
    out << "\n";
  }
  out << "# summary: best=" << format_double(dist.best) << ",median=" << format_double(dist.median)
      << ",p95=" << format_double(dist.p95) << ",degraded=" << (dist.degraded ? "true" : "false")
      << "\n";
  write_file_atomic(path, out.str());
}

void Engine::write_trajectory(const History& history, const std::string& path) const {
  std::ostringstream out;
  out << "round,k,metric,action\n";
  for (const auto& e : history.events()) {
    out << e.round << "," << e.k << ","
        << (std::isfinite(e.metric) ? format_double(e.metric) : "inf") << ","
        << action_name(e.action) << "\n";
  }
  write_file_atomic(path, out.str());
}

void Engine::write_manifest(const std::map<std::string, std::string>& artifacts) const {
  json manifest;
  manifest["engine_version"] = kEngineVersion;
  manifest["generated_at"] = cfg_.zero_timestamps ? zero_timestamp() : utc_now_iso8601();
  manifest["seeds"] = {{"engine", cfg_.seed}, {"oracle", cfg_.oracle.seed}, {"na", cfg_.na.seed}};
  manifest["llm_mode"] = cfg_.llm_mode;
  manifest["deterministic"] = cfg_.llm_mode != "live";
  json arts = json::object();
  for (const auto& [name, path] : artifacts) arts[name] = path;
  manifest["artifacts"] = arts;
  write_file_atomic((fs::path(cfg_.out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

void Engine::write_metrics(const json& metrics) const {
  write_file_atomic((fs::path(cfg_.out_dir) / "metrics.json").string(), metrics.dump(2) + "\n");
}

bool Engine::ask_proceed_on_shortfall(double achieved, double target) {
  if (!llm_) return false;
  ResponseSchema schema;
  schema.description = R"({"proceed": true|false, "reason": string})";
  schema.validate = [](const json& j) -> std::optional<std::string> {
    if (!j.is_object() || !j.contains("proceed") || !j["proceed"].is_boolean()) {
      return "missing boolean field 'proceed'";
    }
    return std::nullopt;
  };
  try {
    Transcript messages;
    messages.push_back({"system",
                        "You assess whether to continue a design pipeline. Reply with one JSON "
                        "object: " +
                            schema.description,
                        -1});
    messages.push_back({"user",
                        "Forward model achieved validation MSE " + format_double(achieved) +
                            " but the target was " + format_double(target) +
                            ". Proceed to inverse design anyway?",
                        -1});
    json reply = llm_->chat_json("planner", messages, schema);
    return reply["proceed"].get<bool>();
  } catch (const Error&) {
    return false;
  }
}

json Engine::run(const std::string& query, const std::map<std::string, std::string>& answers) {
  std::map<std::string, std::string> seeded = answers;
  auto seed_default = [&](const char* key, std::string value) {
    if (!seeded.count(key)) seeded.emplace(key, std::move(value));
  };
  seed_default("input_dim", std::to_string(cfg_.oracle.input_dim));
  seed_default("output_dim", std::to_string(cfg_.oracle.output_dim));
  seed_default("target_metric", format_double(cfg_.budgets.target_metric));
  if (cfg_.oracle.kind == OracleKind::file_backed) seed_default("dataset_path", cfg_.oracle.path);

  TaskSpec task = plan_task(query, seeded, agent_mode(), llm_.get());
  task = verify_inputs(task);

  json metrics;
  metrics["status"] = "ok";
  metrics["plan"] = plan_name(task.plan);
  metrics["mode"] = run_mode_name(task.mode);
  std::map<std::string, std::string> artifacts;
  artifacts["metrics"] = (fs::path(cfg_.out_dir) / "metrics.json").string();
  artifacts["manifest"] = (fs::path(cfg_.out_dir) / "manifest.json").string();

  ModelBundle bundle;
  bool have_bundle = false;

  if (task.plan == Plan::forward_only || task.plan == Plan::both) {
    ForwardTrainResult result = run_forward_train(task);
    bundle = std::move(result.best);
    have_bundle = true;
    const std::string bundle_dir = code_modify(bundle, cfg_.out_dir);
    artifacts["history"] = (fs::path(cfg_.out_dir) / "history.json").string();
    artifacts["forward_model"] = bundle_dir;
    metrics["forward"] = {{"metric", metric_to_json(bundle.metric)},
                          {"model_id", result.best_model_id},
                          {"rounds", result.history.back().round},
                          {"k_final", result.history.back().k},
                          {"target_metric", task.target_metric},
                          {"reached_target", bundle.metric <= task.target_metric}};

    if (task.plan == Plan::both && bundle.metric > task.target_metric) {
      const bool proceed = ask_proceed_on_shortfall(bundle.metric, task.target_metric);
      if (!proceed) {
        metrics["status"] = "error";
        metrics["error"] = {
            {"kind", "target-shortfall"},
            {"message", "forward model reached " + format_double(bundle.metric) +
                            " but the target was " + format_double(task.target_metric) +
                            "; inverse design skipped"}};
        write_metrics(metrics);
        write_manifest(artifacts);
        return metrics;
      }
      metrics["forward"]["proceeding_despite_shortfall"] = true;
    }
  } else {
    bundle = load_bundle(task.bundle_path);
    have_bundle = true;
  }

  if (task.plan == Plan::inverse_only || task.plan == Plan::both) {
    if (!have_bundle) throw MissingInputError("inverse design requires a trained bundle");
    Spectrum target;
    target.values = read_spectrum_file(task.target_spectrum_path);
    const GeometryBounds bounds = GeometryBounds::unit(bundle.spec.input_dim);
    auto outcome = inverse_design(target, bundle, bounds, cfg_.na);
    auto report = design_report(std::move(outcome.results), target, cfg_.oracle, cfg_.top_m);
    const std::string designs_path = (fs::path(cfg_.out_dir) / "designs.csv").string();
    write_designs_csv(designs_path, report.results);
    artifacts["designs"] = designs_path;
    metrics["inverse"] = {{"best", report.best},
                          {"median", report.median},
                          {"p95", report.p95},
                          {"degraded", report.degraded},
                          {"resimulated", report.resimulated},
                          {"candidates", report.results.size()},
                          {"mean_loss_initial", outcome.mean_loss_initial},
                          {"mean_loss_final", outcome.mean_loss_final},
                          {"dropped", outcome.dropped}};
    if (report.results.front().resim_error) {
      metrics["inverse"]["top_resim_error"] = *report.results.front().resim_error;
    }
    metrics["inverse"]["top_surrogate_loss"] = report.results.front().surrogate_loss;
  }

  write_metrics(metrics);
  write_manifest(artifacts);

  // Exit contract: status ok iff every requested artifact exists and parses.
  for (const auto& [name, path] : artifacts) {
    if (!fs::exists(path)) {
      metrics["status"] = "error";
      metrics["error"] = {{"kind", "missing-artifact"}, {"message", name + " missing: " + path}};
      write_metrics(metrics);
      break;
    }
  }
  return metrics;
}

json Engine::experiment(RunMode which) {
  TaskSpec task = default_task();
  task.mode = which;
  if (which == RunMode::fixed_dataset) {
    if (cfg_.oracle.kind != OracleKind::file_backed) {
      throw ConfigError("fixed-dataset experiment requires a file-backed oracle (oracle.path)");
    }
    task.dataset_path = cfg_.oracle.path;
  }

  json metrics;
  metrics["status"] = "ok";
  metrics["experiment"] = run_mode_name(which);
  std::map<std::string, std::string> artifacts;
  artifacts["metrics"] = (fs::path(cfg_.out_dir) / "metrics.json").string();
  artifacts["manifest"] = (fs::path(cfg_.out_dir) / "manifest.json").string();

  ForwardTrainResult result = run_forward_train(task);
  const std::string trajectory_path = (fs::path(cfg_.out_dir) / "trajectory.csv").string();
  write_trajectory(result.history, trajectory_path);
  const std::string bundle_dir = code_modify(result.best, cfg_.out_dir);
  artifacts["history"] = (fs::path(cfg_.out_dir) / "history.json").string();
  artifacts["trajectory"] = trajectory_path;
  artifacts["forward_model"] = bundle_dir;
  metrics["forward"] = {{"metric", metric_to_json(result.best.metric)},
                        {"model_id", result.best_model_id},
                        {"rounds", result.history.back().round},
                        {"k_final", result.history.back().k},
                        {"target_metric", cfg_.budgets.target_metric},
                        {"reached_target", result.best.metric <= cfg_.budgets.target_metric}};

  const std::string dist_path = (fs::path(cfg_.out_dir) / "distribution.csv").string();
  DistributionSummary dist = inverse_evaluation(result.best, dist_path);
  artifacts["distribution"] = dist_path;
  metrics["inverse_eval"] = {{"targets", cfg_.eval_targets},
                             {"best", dist.best},
                             {"median", dist.median},
                             {"p95", dist.p95},
                             {"degraded", dist.degraded}};

  write_metrics(metrics);
  write_manifest(artifacts);
  return metrics;
}

}  // namespace invdes
