#include "invdes/controller.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "invdes/error.hpp"
#include "invdes/jsonio.hpp"
#include "invdes/util.hpp"

namespace invdes {

using nlohmann::json;

std::string action_name(Action a) {
  switch (a) {
    case Action::generate: return "generate";
    case Action::test: return "test";
    case Action::done: return "done";
  }
  return "?";
}

Action parse_action(const std::string& s) {
  if (s == "generate") return Action::generate;
  if (s == "test") return Action::test;
  if (s == "done") return Action::done;
  throw ValidationError("unknown action: '" + s + "'");
}

// --- History ----------------------------------------------------------------------

void History::append(HistoryEvent event) {
  if (events_.empty()) {
    if (event.reason != "Initialization" || event.action != Action::generate) {
      throw ContractError("history event 0 must be the Initialization generate event");
    }
  } else {
    if (event.round <= events_.back().round) {
      throw ContractError("history rounds must be strictly increasing");
    }
    if (event.k < events_.back().k) {
      throw ContractError("history k must be non-decreasing");
    }
  }
  if (std::isnan(event.metric) || event.metric < 0.0) {
    throw ContractError("history metric must be >= 0");
  }
  events_.push_back(std::move(event));
  persist();
}

json History::to_json() const {
  json arr = json::array();
  for (const auto& e : events_) {
    arr.push_back({{"round", e.round},
                   {"k", e.k},
                   {"metric", metric_to_json(e.metric)},
                   {"reason", e.reason},
                   {"action", action_name(e.action)},
                   {"model_id", e.model_id},
                   {"timestamp", e.timestamp}});
  }
  return arr;
}

void History::persist() const {
  if (path_.empty()) return;
  write_file_atomic(path_, to_json().dump(2) + "\n");
}

History History::load(const std::string& path) {
  History h;
  json arr;
  try {
    arr = json::parse(read_file(path));
  } catch (const json::exception& ex) {
    throw LoadError("history file is not valid JSON: " + std::string(ex.what()));
  }
  if (!arr.is_array()) throw LoadError("history file must hold a JSON array");
  for (const auto& j : arr) {
    HistoryEvent e;
    e.round = j.at("round").get<int>();
    e.k = j.at("k").get<long long>();
    e.metric = metric_from_json(j.at("metric"));
    e.reason = j.at("reason").get<std::string>();
    e.action = parse_action(j.at("action").get<std::string>());
    e.model_id = j.value("model_id", "");
    e.timestamp = j.value("timestamp", "");
    h.events_.push_back(std::move(e));
  }
  return h;
}

// --- decide -----------------------------------------------------------------------

namespace {

constexpr double kSaturationFraction = 0.1;  // "below 10% of the earlier rate"
constexpr uint64_t kProposalSeedStream = 0xa9c17ULL;

long long grow_step(long long k, long long budget) {
  const long long grown = k + (k + 1) / 2;  // ceil(1.5 k)
  return std::min(grown, budget);
}

ControllerDecision decide_deterministic(const History& history, const BudgetPolicy& policy) {
  const auto& events = history.events();
  const auto& latest = events.back();
  const long long current_k = latest.k;

  // Target reached.
  if (latest.metric <= policy.target_metric) {
    return {Action::done, current_k,
            "target reached: validation MSE " + format_double(latest.metric) + " <= " +
                format_double(policy.target_metric)};
  }

  // Stagnation: the last two generated architectures both failed to improve
  // the best metric seen before them.
  {
    std::vector<std::pair<double, double>> generates;  // (metric, best before it)
    double running_best = std::numeric_limits<double>::infinity();
    for (const auto& e : events) {
      if (e.action == Action::generate) generates.emplace_back(e.metric, running_best);
      running_best = std::min(running_best, e.metric);
    }
    if (generates.size() >= 3) {  // initialization plus at least two more
      const auto& [m1, before1] = generates[generates.size() - 2];
      const auto& [m2, before2] = generates[generates.size() - 1];
      if (!(m1 < before1) && !(m2 < before2)) {
        return {Action::done, current_k,
                "no improvement from the last two generated architectures; stopping"};
      }
    }
  }

  // Diminishing returns: compare improvement-per-sample across the last three
  // events; when the recent rate drops below 10% of the earlier one, more data
  // is not the bottleneck.
  if (events.size() >= 3) {
    const auto& e1 = events[events.size() - 3];
    const auto& e2 = events[events.size() - 2];
    const auto& e3 = events[events.size() - 1];
    const long long dk_early = e2.k - e1.k;
    const long long dk_recent = e3.k - e2.k;
    if (dk_early > 0 && dk_recent > 0 && std::isfinite(e1.metric) && std::isfinite(e2.metric) &&
        std::isfinite(e3.metric)) {
      const double rate_early = (e1.metric - e2.metric) / static_cast<double>(dk_early);
      const double rate_recent = (e2.metric - e3.metric) / static_cast<double>(dk_recent);
      if (rate_early > 0 && rate_recent < kSaturationFraction * rate_early) {
        return {Action::generate, current_k,
                "improvement per sample has saturated; regenerate model code"};
      }
    }
  }

  // Budget exhausted: only architecture changes are left.
  if (current_k >= policy.data_budget) {
    return {Action::generate, current_k,
            "data budget reached with target unmet; regenerate model code"};
  }

  const long long k_next = grow_step(current_k, policy.data_budget);
  return {Action::test, k_next,
          "metric above target; grow dataset to " + std::to_string(k_next) +
              " and test the current model"};
}

}  // namespace

ControllerDecision decide(const History& history, const BudgetPolicy& policy, AgentMode mode,
                          LlmClient* llm) {
  if (history.empty()) {
    throw ContractError("decide: history is empty (initialization event missing)");
  }
  if (mode == AgentMode::deterministic || llm == nullptr) {
    return decide_deterministic(history, policy);
  }

  const long long current_k = history.back().k;
  ResponseSchema schema;
  schema.description =
      R"({"action": "generate"|"test"|"done", "k_next": integer, "reason": string})";
  schema.validate = [](const json& j) -> std::optional<std::string> {
    if (!j.is_object()) return "not an object";
    if (!j.contains("action") || !j["action"].is_string()) return "missing string field 'action'";
    const auto a = j["action"].get<std::string>();
    if (a != "generate" && a != "test" && a != "done") {
      return "action must be generate, test or done";
    }
    if (!j.contains("k_next") || !j["k_next"].is_number_integer()) {
      return "missing integer field 'k_next'";
    }
    if (!j.contains("reason") || !j["reason"].is_string() ||
        j["reason"].get<std::string>().empty()) {
      return "missing non-empty string field 'reason'";
    }
    return std::nullopt;
  };

  try {
    Transcript messages;
    messages.push_back(
        {"system",
         "You control a surrogate-model training loop. Read the history of (round, dataset size "
         "k, validation MSE, action) events and decide the next step: 'test' the current model "
         "on a larger dataset, 'generate' a new architecture, or 'done' when the target metric "
         "is met or progress has stalled. Prefer progressively larger k. Reply with one JSON "
         "object: " +
             schema.description,
         -1});
    json state;
    state["history"] = history.to_json();
    state["target_metric"] = policy.target_metric;
    state["data_budget"] = policy.data_budget;
    state["max_rounds"] = policy.max_rounds;
    messages.push_back({"user", state.dump(), -1});

    json reply = llm->chat_json("controller", messages, schema);
    ControllerDecision decision;
    decision.action = parse_action(reply["action"].get<std::string>());
    decision.k_next = reply["k_next"].get<long long>();
    decision.reason = reply["reason"].get<std::string>();
    const long long clamped = std::clamp(decision.k_next, current_k, policy.data_budget);
    if (clamped != decision.k_next) {
      decision.reason += " (k_next clamped from " + std::to_string(decision.k_next) + " to " +
                         std::to_string(clamped) + ")";
      decision.k_next = clamped;
    }
    return decision;
  } catch (const SchemaError&) {
  } catch (const TransportError&) {
  }
  ControllerDecision fallback = decide_deterministic(history, policy);
  fallback.reason += " [deterministic fallback]";
  return fallback;
}

// --- propose_model_spec -------------------------------------------------------------

namespace {

struct LadderEntry {
  ModelFamily family;
  int hidden_dim;
  int n_blocks;
  int se_reduction;
};

constexpr LadderEntry kLadder[] = {
    {ModelFamily::plain_mlp, 256, 2, 0},
    {ModelFamily::residual_mlp, 256, 4, 0},
    {ModelFamily::se_residual_mlp, 256, 4, 16},
    {ModelFamily::residual_mlp, 512, 6, 0},
};

ModelSpec ladder_spec(const LadderEntry& entry, LossKind loss, const TaskSpec& task,
                      const TrainDefaults& defaults, uint64_t init_seed) {
  ModelSpec spec;
  spec.family = entry.family;
  spec.input_dim = task.input_dim;
  spec.output_dim = task.output_dim;
  spec.hidden_dim = entry.hidden_dim;
  spec.n_blocks = entry.n_blocks;
  spec.se_reduction = entry.se_reduction;
  spec.loss = loss;
  spec.learning_rate = defaults.learning_rate;
  spec.epochs = defaults.epochs;
  spec.batch_size = defaults.batch_size;
  spec.init_seed = init_seed;
  return spec;
}

ModelSpec propose_from_ladder(const TaskSpec& task, const History& history,
                              const TrainDefaults& defaults, uint64_t init_seed) {
  for (LossKind loss : {LossKind::mse, LossKind::smooth_l1}) {
    for (const auto& entry : kLadder) {
      ModelSpec candidate = ladder_spec(entry, loss, task, defaults, init_seed);
      const std::string id = candidate.id();
      bool tried = false;
      for (const auto& e : history.events()) {
        if (e.model_id == id) {
          tried = true;
          break;
        }
      }
      if (!tried) return candidate;
    }
  }
  throw ExplorationExhaustedError("architecture ladder exhausted: every (family, dims, loss) "
                                  "combination has been tried");
}

}  // namespace

ModelSpec propose_model_spec(const TaskSpec& task, const History& history, AgentMode mode,
                             LlmClient* llm, const TrainDefaults& defaults, uint64_t init_seed) {
  if (mode == AgentMode::deterministic || llm == nullptr) {
    return propose_from_ladder(task, history, defaults, init_seed);
  }

  ResponseSchema schema;
  schema.description =
      R"({"family": "plain-mlp"|"residual-mlp"|"se-residual-mlp", "hidden_dim": int >= 1, "n_blocks": int >= 1, "se_reduction": int (divides hidden_dim; se-residual-mlp only), "loss": "mse"|"smooth-l1", "learning_rate": number > 0 (optional), "epochs": int (optional), "batch_size": int (optional)})";
  schema.validate = [&](const json& j) -> std::optional<std::string> {
    if (!j.is_object()) return "not an object";
    ModelSpec spec;
    try {
      spec.family = parse_family(j.at("family").get<std::string>());
      spec.hidden_dim = j.at("hidden_dim").get<int>();
      spec.n_blocks = j.at("n_blocks").get<int>();
      spec.se_reduction = j.value("se_reduction", 0);
      spec.loss = parse_loss(j.at("loss").get<std::string>());
      spec.learning_rate = j.value("learning_rate", defaults.learning_rate);
      spec.epochs = j.value("epochs", defaults.epochs);
      spec.batch_size = j.value("batch_size", defaults.batch_size);
    } catch (const json::exception& ex) {
      return std::string("malformed fields: ") + ex.what();
    } catch (const ValidationError& ex) {
      return std::string(ex.what());
    }
    spec.input_dim = task.input_dim;
    spec.output_dim = task.output_dim;
    auto violations = spec.validate();
    if (!violations.empty()) {
      std::string msg;
      for (const auto& v : violations) msg += v + "; ";
      return msg;
    }
    return std::nullopt;
  };

  try {
    Transcript messages;
    messages.push_back(
        {"system",
         "You design neural architectures for a regression task. Given the task description and "
         "the history of architectures already tried with their validation metrics, propose the "
         "next architecture as one JSON object: " +
             schema.description,
         -1});
    json state;
    state["task"] = task.task_description;
    state["input_dim"] = task.input_dim;
    state["output_dim"] = task.output_dim;
    state["history"] = history.to_json();
    messages.push_back({"user", state.dump(), -1});

    json reply = llm->chat_json("forward_modeler", messages, schema);
    ModelSpec spec;
    spec.family = parse_family(reply["family"].get<std::string>());
    spec.input_dim = task.input_dim;
    spec.output_dim = task.output_dim;
    spec.hidden_dim = reply["hidden_dim"].get<int>();
    spec.n_blocks = reply["n_blocks"].get<int>();
    spec.se_reduction = reply.value("se_reduction", 0);
    spec.loss = parse_loss(reply["loss"].get<std::string>());
    spec.learning_rate = reply.value("learning_rate", defaults.learning_rate);
    spec.epochs = reply.value("epochs", defaults.epochs);
    spec.batch_size = reply.value("batch_size", defaults.batch_size);
    spec.init_seed = init_seed;
    return spec;
  } catch (const SchemaError&) {
  } catch (const TransportError&) {
  }
  return propose_from_ladder(task, history, defaults, init_seed);
}

// --- forward_train ------------------------------------------------------------------

ForwardTrainResult forward_train(const TaskSpec& task, const ForwardTrainConfig& cfg) {
  if (cfg.k0 < 11) throw ContractError("forward_train requires k0 >= 11");
  if (cfg.k0 > cfg.policy.data_budget) {
    throw ContractError("forward_train requires k0 <= data_budget");
  }
  cfg.oracle.validate();

  GeometryBounds bounds = cfg.bounds;
  if (bounds.size() == 0) bounds = GeometryBounds::unit(cfg.oracle.input_dim);

  auto timestamp = [&]() { return cfg.zero_timestamps ? zero_timestamp() : utc_now_iso8601(); };
  auto next_seed = [&, counter = uint64_t{0}]() mutable {
    return counter_hash(cfg.seed, kProposalSeedStream, counter++);
  };

  ForwardTrainResult result;
  result.history = History(cfg.history_path);
  History& history = result.history;

  Dataset dataset = grow_dataset(Dataset(cfg.oracle.input_dim, cfg.oracle.output_dim),
                                 static_cast<std::size_t>(cfg.k0), cfg.oracle, bounds);

  // Initialization: first architecture, first training, first event.
  ModelBundle latest;
  std::string latest_id;
  {
    ModelSpec spec0 = propose_model_spec(task, history, cfg.mode, cfg.llm, cfg.train, next_seed());
    double metric0;
    try {
      latest = train(spec0, dataset);
      latest.provenance.round = 0;
      metric0 = latest.metric;
    } catch (const DivergenceError&) {
      latest = build_model(spec0);
      metric0 = std::numeric_limits<double>::infinity();
    }
    latest_id = spec0.id();
    history.append({0, static_cast<long long>(dataset.size()), metric0, "Initialization",
                    Action::generate, latest_id, timestamp()});
  }

  ModelBundle best = latest;
  std::string best_id = latest_id;
  double best_metric = history.back().metric;
  best.metric = best_metric;

  for (int round = 1; round <= cfg.policy.max_rounds; ++round) {
    ControllerDecision decision = decide(history, cfg.policy, cfg.mode, cfg.llm);

    if (decision.action == Action::done) {
      history.append({round, static_cast<long long>(dataset.size()), history.back().metric,
                      decision.reason, Action::done, latest_id, timestamp()});
      break;
    }

    dataset = grow_dataset(dataset, static_cast<std::size_t>(decision.k_next), cfg.oracle, bounds);

    double metric;
    std::string model_id = latest_id;
    Action performed = decision.action;
    std::string reason = decision.reason;

    if (decision.action == Action::generate) {
      ModelSpec spec;
      try {
        spec = propose_model_spec(task, history, cfg.mode, cfg.llm, cfg.train, next_seed());
      } catch (const ExplorationExhaustedError& ex) {
        history.append({round, static_cast<long long>(dataset.size()), history.back().metric,
                        std::string(ex.what()) + "; stopping", Action::done, latest_id,
                        timestamp()});
        break;
      }
      model_id = spec.id();
      try {
        ModelBundle trained = train(spec, dataset);
        trained.provenance.round = round;
        latest = std::move(trained);
        latest_id = model_id;
        metric = latest.metric;
      } catch (const DivergenceError& ex) {
        metric = std::numeric_limits<double>::infinity();
        reason += " [training diverged: " + std::string(ex.what()) + "]";
      }
    } else {
      metric = evaluate(latest, dataset);
      model_id = latest_id;
    }

    if (metric < best_metric) {
      best_metric = metric;
      best = latest;
      best.metric = metric;
      best_id = model_id;
    }

    history.append({round, static_cast<long long>(dataset.size()), metric, reason, performed,
                    model_id, timestamp()});
  }

  result.best = std::move(best);
  result.best_model_id = best_id;
  result.latest_model_id = latest_id;
  result.dataset = std::move(dataset);
  return result;
}

}  // namespace invdes
