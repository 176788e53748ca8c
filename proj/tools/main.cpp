#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "invdes/engine.hpp"
#include "invdes/error.hpp"
#include "invdes/jsonio.hpp"
#include "invdes/util.hpp"

namespace {

using invdes::Engine;
using invdes::EngineConfig;

std::map<std::string, std::string> parse_answers(const std::vector<std::string>& raw) {
  std::map<std::string, std::string> answers;
  for (const auto& kv : raw) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw invdes::ConfigError("--answer expects key=value, got '" + kv + "'");
    }
    answers[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return answers;
}

EngineConfig make_config(const std::string& config_path, std::vector<std::string> overrides,
                         const std::string& out_dir) {
  if (!out_dir.empty()) overrides.push_back("out_dir=" + out_dir);
  return EngineConfig::load(config_path, overrides);
}

int finish(const nlohmann::json& metrics) {
  std::cout << metrics.dump(2) << std::endl;
  return metrics.value("status", "error") == "ok" ? 0 : 2;
}

// Writes an error metrics.json so failed stages leave context behind.
int fail(const EngineConfig* cfg, const std::exception& ex) {
  std::cerr << "error: " << ex.what() << std::endl;
  if (cfg) {
    try {
      nlohmann::json metrics;
      metrics["status"] = "error";
      metrics["error"] = {{"kind", "exception"}, {"message", ex.what()}};
      std::filesystem::create_directories(cfg->out_dir);
      invdes::write_file_atomic(
          (std::filesystem::path(cfg->out_dir) / "metrics.json").string(),
          metrics.dump(2) + "\n");
    } catch (...) {
    }
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agentic surrogate training and adjoint-based inverse design"};
  app.require_subcommand(1);

  std::string config_path, out_dir, query, which = "target-mse";
  std::vector<std::string> overrides, raw_answers;
  std::string bundle_path, target_path, dataset_path;
  int input_dim = 14, output_dim = 201;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Engine config JSON file");
    cmd->add_option("--set", overrides, "Override a config key, e.g. budgets.target_metric=0.001");
    cmd->add_option("--out-dir", out_dir, "Output directory for artifacts");
  };

  auto* run = app.add_subcommand("run", "Plan and execute the full pipeline");
  add_common(run);
  run->add_option("--query", query, "Natural-language task query");
  run->add_option("--answer", raw_answers, "Task answer key=value (repeatable)");

  auto* experiment = app.add_subcommand("experiment", "Run one of the two evaluation harnesses");
  add_common(experiment);
  experiment->add_option("--which", which, "target-mse or fixed-dataset")->required();

  auto* fwd = app.add_subcommand("forward-train", "Train the forward surrogate only");
  add_common(fwd);

  auto* inverse = app.add_subcommand("inverse", "Inverse design from an existing bundle");
  add_common(inverse);
  inverse->add_option("--bundle", bundle_path, "Trained bundle directory")->required();
  inverse->add_option("--target", target_path, "Target spectrum file")->required();

  auto* check = app.add_subcommand("check", "Verify task inputs without running anything");
  check->add_option("--target-spectrum", target_path, "Target spectrum file");
  check->add_option("--dataset", dataset_path, "Dataset CSV file");
  check->add_option("--bundle", bundle_path, "Bundle directory");
  check->add_option("--input-dim", input_dim, "Geometry dimension");
  check->add_option("--output-dim", output_dim, "Spectrum length");

  CLI11_PARSE(app, argc, argv);

  EngineConfig cfg;
  bool have_cfg = false;
  try {
    if (check->parsed()) {
      invdes::TaskSpec task;
      task.input_dim = input_dim;
      task.output_dim = output_dim;
      task.target_spectrum_path = target_path;
      task.dataset_path = dataset_path;
      task.bundle_path = bundle_path;
      task.plan = target_path.empty() ? invdes::Plan::forward_only : invdes::Plan::both;
      task.mode =
          dataset_path.empty() ? invdes::RunMode::target_mse : invdes::RunMode::fixed_dataset;
      invdes::verify_inputs(task);
      std::cout << "all inputs present and consistent" << std::endl;
      return 0;
    }

    cfg = make_config(config_path, overrides, out_dir);
    have_cfg = true;
    Engine engine(cfg);

    if (run->parsed()) {
      return finish(engine.run(query, parse_answers(raw_answers)));
    }
    if (experiment->parsed()) {
      return finish(engine.experiment(invdes::parse_run_mode(which)));
    }
    if (fwd->parsed()) {
      std::map<std::string, std::string> answers = parse_answers(raw_answers);
      answers["plan"] = "forward-only";
      return finish(engine.run(query, answers));
    }
    if (inverse->parsed()) {
      std::map<std::string, std::string> answers;
      answers["plan"] = "inverse-only";
      answers["bundle_path"] = bundle_path;
      answers["target_spectrum_path"] = target_path;
      return finish(engine.run(query, answers));
    }
  } catch (const std::exception& ex) {
    return fail(have_cfg ? &cfg : nullptr, ex);
  }
  return 1;
}
