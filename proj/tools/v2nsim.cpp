#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "v2n/experiment.hpp"
#include "v2n/oracle.hpp"

namespace {

using nlohmann::json;
using Handler = json (*)(const v2n::ExperimentConfig&, const std::filesystem::path&);

int fail(const char* kind, const std::string& command, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"command", command}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge autoscaling simulator for C-V2N video analytics"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  const std::map<std::string, std::pair<Handler, const char*>> commands{
      {"gen-trace", {&v2n::cmd_gen_trace, "Generate arrival trace replications"}},
      {"train", {&v2n::cmd_train, "Train the DDPG agents on the training window"}},
      {"evaluate", {&v2n::cmd_evaluate, "Evaluate every agent on every test trace"}},
      {"oracle", {&v2n::cmd_oracle, "Solve a micro instance exactly and report agent gaps"}},
      {"bench", {&v2n::cmd_bench, "Measure per-decision latency on synthetic states"}},
  };
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.second);
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
    sub->add_option("--seed", seed, "Override the trace seed base");
    sub->add_flag("--quiet", quiet, "Do not print the JSON summary");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", "", e.what(), 2);
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    auto cfg = v2n::load_experiment_config(config_path);
    if (seed) cfg.override_seed(*seed);
    const json summary = commands.at(name).first(cfg, out_dir);
    if (!quiet) std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const v2n::BudgetExceeded& e) {
    return fail("budget_exceeded", name, e.what(), 3);
  } catch (const std::invalid_argument& e) {
    return fail("invalid_config", name, e.what(), 2);
  } catch (const nlohmann::json::exception& e) {
    return fail("invalid_json", name, e.what(), 2);
  } catch (const std::exception& e) {
    return fail("runtime", name, e.what(), 1);
  }
}
